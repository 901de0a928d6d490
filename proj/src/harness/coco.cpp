#include "raincap/harness/coco.hpp"

#include <map>

#include "json.hpp"
#include "raincap/harness/checkpoint.hpp"
#include "raincap/harness/image_io.hpp"

namespace raincap::harness {

using nlohmann::json;

namespace {

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  return obj.at(key);
}

long long id_of(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw DataError(where + ": id must be an integer");
  return v.get<long long>();
}

std::string string_of(const json& v, const std::string& where) {
  if (!v.is_string()) throw DataError(where + ": expected a string");
  return v.get<std::string>();
}

}  // namespace

CocoDataset parse_coco_captions(std::string_view json_text, const std::filesystem::path& image_dir, int size) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError("malformed annotation JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  const json& images = field(doc, "images", "annotation file");
  const json& annotations = field(doc, "annotations", "annotation file");
  if (!images.is_array() || !annotations.is_array()) throw DataError("images and annotations must be arrays");

  CocoDataset out;
  std::map<long long, std::string> files;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    const long long id = id_of(field(images[i], "id", where), where);
    if (!files.emplace(id, string_of(field(images[i], "file_name", where), where)).second)
      throw DataError(where + ": duplicate image id " + std::to_string(id));
  }
  std::map<long long, std::vector<std::string>> captions;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    const long long id = id_of(field(annotations[i], "image_id", where), where);
    std::string text = string_of(field(annotations[i], "caption", where), where);
    if (!files.count(id)) {
      ++out.warnings;
      out.messages.push_back(where + " references unknown image id " + std::to_string(id));
      continue;
    }
    captions[id].push_back(std::move(text));
  }
  for (auto& [id, caps] : captions) {
    const auto path = image_dir / files.at(id);
    CocoRecord rec;
    try {
      rec.image = import_image(path);
    } catch (const DataError& e) {
      ++out.warnings;
      out.messages.push_back(std::string("skipped image: ") + e.what());
      continue;
    }
    if (size > 0) rec.image = resize_bilinear(rec.image, size, size);
    rec.image_id = id;
    rec.file_name = files.at(id);
    rec.captions = std::move(caps);
    out.records.push_back(std::move(rec));
  }
  return out;
}

CocoDataset ingest_coco_captions(const std::filesystem::path& annotation_file, const std::filesystem::path& image_dir,
                                 int size) {
  const std::string text = read_file(annotation_file);
  try {
    return parse_coco_captions(text, image_dir, size);
  } catch (const DataError& e) {
    throw DataError(annotation_file.string() + ": " + e.what());
  }
}

}  // namespace raincap::harness
