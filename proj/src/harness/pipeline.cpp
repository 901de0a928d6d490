#include "raincap/harness/pipeline.hpp"

#include <charconv>
#include <cstdio>
#include <random>
#include <sstream>

#include "raincap/harness/checkpoint.hpp"
#include "raincap/harness/image_io.hpp"
#include "raincap/harness/shapes.hpp"

namespace raincap::harness {

namespace fs = std::filesystem;

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
  // splitmix64 finalizer over seed ^ hash(stage)
  std::uint64_t z = seed ^ fnv1a(stage);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

caption::Vocabulary vocab_for(const std::vector<std::vector<std::string>>& captions) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& caps : captions)
    for (const auto& c : caps) corpus.push_back(caption::tokenize(c));
  return caption::Vocabulary::build(corpus);
}

std::string id_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  while (true) {
    const auto k = s.find(sep);
    out.emplace_back(s.substr(0, k));
    if (k == std::string_view::npos) return out;
    s.remove_prefix(k + 1);
  }
}

std::vector<std::string> lines_of(const std::string& text) {
  auto out = split(text, '\n');
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

int parse_int(const std::string& s, const std::string& where) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw DataError(where + ": bad integer '" + s + "'");
  return v;
}

template <class P>
P plane_from(const grad::Tensor<float>& t) {
  P p;
  static_cast<rain::Plane&>(p) = rain::plane_from_tensor(t);
  return p;
}

}  // namespace

Dataset make_shapes_dataset(const ExperimentConfig& cfg) {
  cfg.rain.validate();
  Dataset d;
  const auto records = gen_shapes_dataset(cfg.count, stage_seed(cfg.seed, "shapes"));
  const auto rain_seed = stage_seed(cfg.seed, "rain");
  for (std::size_t i = 0; i < records.size(); ++i) {
    d.samples.push_back(rain::make_sample(records[i].image, records[i].depth, rain_seed + i, cfg.rain));
    d.captions.push_back(records[i].captions);
    d.sources.push_back("shapes:" + std::to_string(records[i].scene.seed));
  }
  d.vocab = vocab_for(d.captions);
  return d;
}

rain::DepthMap ramp_depth(int height, int width) {
  rain::DepthMap depth;
  depth.height = height;
  depth.width = width;
  depth.values.resize(static_cast<std::size_t>(height) * width);
  // far at the top, near at the bottom, the usual outdoor layout
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      depth.at(y, x) = static_cast<float>(1.0 - 0.7 * (height > 1 ? static_cast<double>(y) / (height - 1) : 0.0));
  return depth;
}

Dataset make_coco_dataset(const CocoDataset& coco, const ExperimentConfig& cfg) {
  Dataset d;
  const auto rain_seed = stage_seed(cfg.seed, "rain");
  for (const auto& r : coco.records) {
    if (r.image.height % 16 || r.image.width % 16)
      throw DataError("coco image " + r.file_name + " has extents not divisible by 16; resize on ingestion");
    const auto depth = ramp_depth(r.image.height, r.image.width);
    d.samples.push_back(rain::make_sample(r.image, depth, rain_seed + d.samples.size(), cfg.rain));
    d.captions.push_back(r.captions);
    d.sources.push_back("coco:" + std::to_string(r.image_id) + ":" + r.file_name);
  }
  if (d.samples.empty()) throw DataError("coco ingestion produced no records");
  d.vocab = vocab_for(d.captions);
  return d;
}

std::vector<caption::CaptionSample> caption_samples(const Dataset& d, int max_len, int* skipped) {
  std::vector<caption::CaptionSample> out;
  int dropped = 0;
  for (std::size_t i = 0; i < d.captions.size(); ++i)
    for (const auto& c : d.captions[i]) {
      try {
        out.push_back({static_cast<int>(i), d.vocab.encode(caption::tokenize(c), max_len), c});
      } catch (const std::length_error&) {
        ++dropped;
      }
    }
  if (skipped) *skipped = dropped;
  return out;
}

std::vector<rain::Image> clean_images(const Dataset& d) {
  std::vector<rain::Image> out;
  for (const auto& s : d.samples) out.push_back(s.J);
  return out;
}

std::vector<rain::Image> rainy_images(const Dataset& d) {
  std::vector<rain::Image> out;
  for (const auto& s : d.samples) out.push_back(s.I);
  return out;
}

std::vector<svfm::SvfmPair> pairs_of(const Dataset& d) {
  std::vector<svfm::SvfmPair> out;
  for (const auto& s : d.samples) out.push_back({s.I, s.J});
  return out;
}

std::string report_header(const ExperimentConfig& cfg) {
  return "# config_hash " + cfg.hash() + " seed " + std::to_string(cfg.seed) + "\n";
}

void write_dataset(const fs::path& dir, const Dataset& d, const ExperimentConfig& cfg) {
  NamedTensors<float> named;
  std::string captions = report_header(cfg) + "image_id\tindex\tcaption\n";
  std::string params = report_header(cfg) +
                       "image_id\tsource\tseed\tlayers\tdensity\tsigma\tlength\tangle_deg\tatmosphere\tbeta\n";
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    const std::string p = "sample." + id_name(static_cast<int>(i)) + ".";
    named.emplace_back(p + "J", rain::to_tensor<float>(s.J));
    named.emplace_back(p + "I", rain::to_tensor<float>(s.I));
    named.emplace_back(p + "T", rain::to_tensor<float>(s.T));
    named.emplace_back(p + "S", rain::to_tensor<float>(s.S_sum));
    named.emplace_back(p + "depth", rain::to_tensor<float>(s.depth));
    named.emplace_back(p + "A", grad::Tensor<float>::from_data({3}, {s.A.rgb[0], s.A.rgb[1], s.A.rgb[2]}));
    export_image(s.J, dir / "clean" / (id_name(static_cast<int>(i)) + ".png"));
    export_image(s.I, dir / "rainy" / (id_name(static_cast<int>(i)) + ".png"));
    for (std::size_t k = 0; k < d.captions[i].size(); ++k)
      captions += std::to_string(i) + "\t" + std::to_string(k) + "\t" + one_line(d.captions[i][k]) + "\n";
    const auto& q = s.params;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%llu\t%d\t%.9g\t%.9g\t%d\t%.9g\t%.9g\t%.9g\n", i,
                  one_line(d.sources[i]).c_str(), static_cast<unsigned long long>(s.seed), q.layers, q.density,
                  q.sigma, q.length, q.angle_deg, q.atmosphere, q.beta);
    params += buf;
  }
  save_checkpoint(dir / "samples.rcap", named);
  write_file_atomic(dir / "captions.tsv", captions);
  write_file_atomic(dir / "params.tsv", params);
  std::string vocab;
  for (const auto& t : d.vocab.to_lines()) vocab += t + "\n";
  write_file_atomic(dir / "vocab.txt", vocab);
  write_file_atomic(dir / "manifest.tsv", report_header(cfg) + "count\t" + std::to_string(d.samples.size()) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "samples.rcap")) throw DataError("no dataset in " + dir.string() + " (run gen-data first)");
  const auto named = load_checkpoint(dir / "samples.rcap");
  if (named.size() % 6 != 0) throw DataError("samples.rcap: expected six tensors per sample");
  const std::size_t n = named.size() / 6;
  Dataset d;
  std::map<std::string, const grad::Tensor<float>*> index;
  for (const auto& [k, t] : named) index[k] = &t;
  auto get = [&](std::size_t i, const char* what) -> const grad::Tensor<float>& {
    const auto it = index.find("sample." + id_name(static_cast<int>(i)) + "." + what);
    if (it == index.end()) throw DataError("samples.rcap: missing sample " + std::to_string(i) + " " + what);
    return *it->second;
  };
  for (std::size_t i = 0; i < n; ++i) {
    rain::HeavyRainSample s;
    s.J = rain::image_from_tensor(get(i, "J"));
    s.I = rain::image_from_tensor(get(i, "I"));
    s.T = plane_from<rain::TransmissionMap>(get(i, "T"));
    s.S_sum = plane_from<rain::RainLayer>(get(i, "S"));
    s.depth = plane_from<rain::DepthMap>(get(i, "depth"));
    const auto& A = get(i, "A");
    if (A.numel() != 3) throw DataError("samples.rcap: A must hold three values");
    s.A.rgb = {A.at(0), A.at(1), A.at(2)};
    if (s.I.height != s.J.height || s.I.width != s.J.width || s.T.height != s.J.height || s.T.width != s.J.width)
      throw DataError("samples.rcap: sample " + std::to_string(i) + " has mismatched extents");
    d.samples.push_back(std::move(s));
  }

  d.captions.resize(n);
  d.sources.resize(n);
  for (const auto& line : lines_of(read_file(dir / "captions.tsv"))) {
    if (line.empty() || line[0] == '#' || line.starts_with("image_id\t")) continue;
    const auto f = split(line, '\t');
    if (f.size() != 3) throw DataError("captions.tsv: expected three columns in '" + line + "'");
    const int id = parse_int(f[0], "captions.tsv");
    if (id < 0 || static_cast<std::size_t>(id) >= n) throw DataError("captions.tsv: image id out of range: " + f[0]);
    d.captions[static_cast<std::size_t>(id)].push_back(f[2]);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (d.captions[i].empty()) throw DataError("captions.tsv: image " + std::to_string(i) + " has no caption");
  for (const auto& line : lines_of(read_file(dir / "params.tsv"))) {
    if (line.empty() || line[0] == '#' || line.starts_with("image_id\t")) continue;
    const auto f = split(line, '\t');
    if (f.size() < 2) throw DataError("params.tsv: malformed line");
    const int id = parse_int(f[0], "params.tsv");
    if (id >= 0 && static_cast<std::size_t>(id) < n) d.sources[static_cast<std::size_t>(id)] = f[1];
  }
  try {
    d.vocab = caption::Vocabulary::from_lines(lines_of(read_file(dir / "vocab.txt")));
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("vocab.txt: ") + e.what());
  }
  return d;
}

caption::CaptionModel<float> new_captioner(const ExperimentConfig& cfg, int vocab_size) {
  return caption::CaptionModel<float>(cfg.dims, vocab_size, stage_seed(cfg.seed, "captioner.init"));
}

irs::IrsModel<float> new_irs(const ExperimentConfig& cfg) {
  return irs::IrsModel<float>(stage_seed(cfg.seed, "irs.init"), cfg.irs.widths);
}

caption::EncoderModel<float> new_encoder(const ExperimentConfig& cfg) {
  std::mt19937_64 rng(stage_seed(cfg.seed, "encoder.init"));
  return caption::EncoderModel<float>(cfg.dims, rng);
}

svfm::ProposedEncoder new_proposed(const ExperimentConfig& cfg) { return {new_irs(cfg), new_encoder(cfg)}; }

void load_into(const fs::path& path, NamedTensors<float> dest) { restore(load_checkpoint(path), dest); }

std::string row_name(svfm::EvalMode m) {
  switch (m) {
    case svfm::EvalMode::nic_t: return "NIC_T";
    case svfm::EvalMode::nic_s: return "NIC_S";
    case svfm::EvalMode::nic_t_d: return "NIC_T(D)";
    case svfm::EvalMode::proposed: return "Proposed";
  }
  return "?";
}

std::map<std::string, metrics::EvalCorpus> table_corpora(const Dataset& d, const svfm::ModeModels& models,
                                                         int max_len) {
  std::map<std::string, metrics::EvalCorpus> rows;
  std::vector<std::vector<std::vector<std::string>>> refs(d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    for (const auto& c : d.captions[i]) refs[i].push_back(caption::tokenize(c));
  for (svfm::EvalMode m : svfm::kAllModes) {
    auto& corpus = rows[row_name(m)];
    for (std::size_t i = 0; i < d.samples.size(); ++i)
      corpus.push_back({static_cast<int>(i), d.vocab.decode(svfm::caption_with_mode(d.samples[i].I, m, models, max_len)),
                        refs[i]});
  }
  auto& clean = rows["NIC_T clean input"];
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    clean.push_back({static_cast<int>(i), d.vocab.decode(caption::caption_greedy(d.samples[i].J, *models.captioner, max_len)),
                     refs[i]});
  return rows;
}

}  // namespace raincap::harness
