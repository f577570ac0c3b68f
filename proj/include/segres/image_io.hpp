#pragma once

#include <filesystem>
#include <vector>

#include "segres/core.hpp"

namespace segres {

// 8-bit PNG files are the on-disk contract: RGB for images, single-channel
// gray for label maps (pixel value = class index).
Image load_image_png(const std::filesystem::path& path);
void save_image_png(const std::filesystem::path& path, const Image& img);

LabelMap load_label_png(const std::filesystem::path& path, int num_classes);
void save_label_png(const std::filesystem::path& path, const LabelMap& labels);

// Fixed palette for visualizing label maps (supports up to 16 classes).
Image colorize_labels(const LabelMap& labels);

// Horizontal strip with thin white separators; panels must share dimensions.
Image hstack_grid(const std::vector<Image>& panels, int separator = 2);

}  // namespace segres
