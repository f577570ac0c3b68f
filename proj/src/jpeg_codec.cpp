#include "segres/jpeg_codec.hpp"

#include <csetjmp>
#include <cstdio>

#include <jpeglib.h>

#include "segres/errors.hpp"

namespace segres {

namespace {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

}  // namespace

std::vector<std::uint8_t> jpeg_encode_rgb8(const std::uint8_t* rgb, int width, int height,
                                           int quality) {
  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;

  unsigned char* buffer = nullptr;
  unsigned long buffer_size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (buffer) free(buffer);
    throw IoError("jpeg encode failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &buffer_size);
  cinfo.image_width = JDIMENSION(width);
  cinfo.image_height = JDIMENSION(height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    const JSAMPLE* row = rgb + std::size_t(cinfo.next_scanline) * width * 3;
    JSAMPROW rows[1] = {const_cast<JSAMPROW>(row)};
    jpeg_write_scanlines(&cinfo, rows, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + buffer_size);
  jpeg_destroy_compress(&cinfo);
  free(buffer);
  return out;
}

std::vector<std::uint8_t> jpeg_decode_rgb8(const std::vector<std::uint8_t>& encoded, int& width,
                                           int& height) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("jpeg decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, encoded.data(), (unsigned long)encoded.size());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = int(cinfo.output_width);
  height = int(cinfo.output_height);
  std::vector<std::uint8_t> out(std::size_t(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data() + std::size_t(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

std::string jpeg_codec_identity() {
#ifdef LIBJPEG_TURBO_VERSION_NUMBER
  return "libjpeg-turbo, API version " + std::to_string(JPEG_LIB_VERSION);
#else
  return "libjpeg, API version " + std::to_string(JPEG_LIB_VERSION);
#endif
}

}  // namespace segres
