#pragma once

// PNG and HDF5 shims used only by the command-line tool.

#include <hdf5.h>
#include <png.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rmau/core_types.hpp"
#include "rmau/error.hpp"
#include "rmau/trainer.hpp"

namespace rmau::cli {

namespace fs = std::filesystem;

struct Raster8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> values;
};

inline Raster8 read_png(const fs::path& path, bool gray) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw Error(Errc::IoFailure, path.string() + ": " + image.message);
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster8 r{static_cast<int>(image.height), static_cast<int>(image.width), gray ? 1 : 3, {}};
  r.values.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, r.values.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(Errc::IoFailure, path.string() + ": " + image.message);
  }
  return r;
}

inline void write_png(const fs::path& path, const RgbImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw Error(Errc::IoFailure, path.string() + ": " + image.message);
}

/// Reads a whole dataset as float or uint8, returning its dimensions.
template <class V>
std::vector<V> read_h5(const fs::path& path, const std::string& dataset, std::vector<hsize_t>& dims) {
  H5E_auto2_t old_fn;
  void* old_data;
  H5Eget_auto2(H5E_DEFAULT, &old_fn, &old_data);
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  const hid_t file = H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
  if (file < 0) {
    H5Eset_auto2(H5E_DEFAULT, old_fn, old_data);
    throw Error(Errc::IoFailure, "cannot open HDF5 file " + path.string());
  }
  const hid_t ds = H5Dopen2(file, dataset.c_str(), H5P_DEFAULT);
  if (ds < 0) {
    H5Fclose(file);
    H5Eset_auto2(H5E_DEFAULT, old_fn, old_data);
    throw Error(Errc::IoFailure, path.string() + " has no dataset '" + dataset + "'");
  }
  const hid_t space = H5Dget_space(ds);
  const int rank = H5Sget_simple_extent_ndims(space);
  dims.assign(static_cast<std::size_t>(std::max(rank, 0)), 0);
  H5Sget_simple_extent_dims(space, dims.data(), nullptr);
  std::size_t count = 1;
  for (auto d : dims) count *= static_cast<std::size_t>(d);
  std::vector<V> out(count);
  const hid_t type = std::is_same_v<V, float> ? H5T_NATIVE_FLOAT : H5T_NATIVE_UINT8;
  const herr_t status = H5Dread(ds, type, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.data());
  H5Sclose(space);
  H5Dclose(ds);
  H5Fclose(file);
  H5Eset_auto2(H5E_DEFAULT, old_fn, old_data);
  if (status < 0) throw Error(Errc::IoFailure, "cannot read '" + dataset + "' from " + path.string());
  return out;
}

/// Bilinear resampling of an interleaved raster (pixel centres aligned).
inline std::vector<float> resize_bilinear(const std::vector<float>& src, int h, int w, int c, int size) {
  if (h == size && w == size) return src;
  std::vector<float> out(static_cast<std::size_t>(size) * size * c);
  for (int r = 0; r < size; ++r) {
    const double sy = std::clamp((r + 0.5) * h / size - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int col = 0; col < size; ++col) {
      const double sx = std::clamp((col + 0.5) * w / size - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        auto at = [&](int y, int x) { return static_cast<double>(src[(static_cast<std::size_t>(y) * w + x) * c + ch]); };
        const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        out[(static_cast<std::size_t>(r) * size + col) * c + ch] = static_cast<float>(v);
      }
    }
  }
  return out;
}

inline MaskImage resize_nearest(const std::vector<std::uint8_t>& src, int h, int w, int size) {
  MaskImage out(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const int y = std::min(h - 1, r * h / size);
      const int x = std::min(w - 1, c * w / size);
      out.at(r, c) = src[static_cast<std::size_t>(y) * w + x] ? 1 : 0;
    }
  return out;
}

}  // namespace rmau::cli
