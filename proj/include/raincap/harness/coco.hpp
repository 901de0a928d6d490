#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "raincap/rain/image.hpp"

namespace raincap::harness {

struct CocoRecord {
  long long image_id = 0;
  std::string file_name;
  rain::Image image;
  std::vector<std::string> captions;  // annotation order
};

struct CocoDataset {
  std::vector<CocoRecord> records;  // ascending image id
  int warnings = 0;
  std::vector<std::string> messages;
};

/// Reads the images[{id, file_name}] / annotations[{image_id, caption}]
/// subset of the COCO captions schema. Images are resized to `size`×`size`
/// when `size` > 0. Malformed JSON or schema violations throw DataError;
/// annotations naming an unknown image id and unreadable image files become
/// warnings. Images without any caption are dropped silently.
CocoDataset parse_coco_captions(std::string_view json_text, const std::filesystem::path& image_dir, int size = 0);
CocoDataset ingest_coco_captions(const std::filesystem::path& annotation_file, const std::filesystem::path& image_dir,
                                 int size = 0);

}  // namespace raincap::harness
