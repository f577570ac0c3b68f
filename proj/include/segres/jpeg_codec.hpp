#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace segres {

// Baseline sequential JPEG via libjpeg, in-memory.
std::vector<std::uint8_t> jpeg_encode_rgb8(const std::uint8_t* rgb, int width, int height,
                                           int quality);
std::vector<std::uint8_t> jpeg_decode_rgb8(const std::vector<std::uint8_t>& encoded, int& width,
                                           int& height);

// Identity string of the pinned codec, recorded in dataset manifests.
std::string jpeg_codec_identity();

}  // namespace segres
