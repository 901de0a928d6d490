#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "raincap/caption/captioner.hpp"
#include "raincap/caption/vocab.hpp"
#include "raincap/harness/coco.hpp"
#include "raincap/harness/config.hpp"
#include "raincap/metrics/metrics.hpp"
#include "raincap/svfm/svfm.hpp"

namespace raincap::harness {

/// Seed for one named stage of a run, so adding a stage never shifts another.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage);

/// Clean/rainy pairs with their captions; image id = index.
struct Dataset {
  std::vector<rain::HeavyRainSample> samples;
  std::vector<std::vector<std::string>> captions;
  std::vector<std::string> sources;  // where each clean image came from
  caption::Vocabulary vocab;
};

/// Shapes-world scenes, each paired with its own heavy-rain rendering.
Dataset make_shapes_dataset(const ExperimentConfig& cfg);
/// COCO images (already resized) with a top-to-bottom depth ramp standing in
/// for estimated depth.
Dataset make_coco_dataset(const CocoDataset& coco, const ExperimentConfig& cfg);
rain::DepthMap ramp_depth(int height, int width);

/// Captions longer than `max_len` ids (with start and end) are left out and
/// counted in `skipped`.
std::vector<caption::CaptionSample> caption_samples(const Dataset& d, int max_len, int* skipped = nullptr);
std::vector<rain::Image> clean_images(const Dataset& d);
std::vector<rain::Image> rainy_images(const Dataset& d);
std::vector<svfm::SvfmPair> pairs_of(const Dataset& d);

/// data/: samples.rcap, clean/ and rainy/ PNGs, captions.tsv, params.tsv,
/// vocab.txt, manifest.tsv.
void write_dataset(const std::filesystem::path& dir, const Dataset& d, const ExperimentConfig& cfg);
/// Throws DataError for anything missing or inconsistent.
Dataset read_dataset(const std::filesystem::path& dir);

caption::CaptionModel<float> new_captioner(const ExperimentConfig& cfg, int vocab_size);
irs::IrsModel<float> new_irs(const ExperimentConfig& cfg);
/// Shapes only; fill with restore().
svfm::ProposedEncoder new_proposed(const ExperimentConfig& cfg);
caption::EncoderModel<float> new_encoder(const ExperimentConfig& cfg);

inline const std::string kNicSPrefix = "nic_s.source.";

/// Restores `dest` from a checkpoint file; DataError when missing or mismatched.
void load_into(const std::filesystem::path& path, grad::NamedTensors<float> dest);

std::string row_name(svfm::EvalMode m);

/// One corpus per table row over every rainy image; references are the
/// image's captions.
std::map<std::string, metrics::EvalCorpus> table_corpora(const Dataset& d, const svfm::ModeModels& models, int max_len);

/// "# config_hash <h> seed <s>" first line for every emitted report.
std::string report_header(const ExperimentConfig& cfg);

}  // namespace raincap::harness
