#include "raincap/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace raincap::harness {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'C', 'A', 'P'};

template <class U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : bytes_(b) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw DataError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const NamedTensors<float>& tensors) {
  std::set<std::string> names;
  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.size() > 0xFFFF) throw std::invalid_argument("checkpoint names must be 1..65535 bytes");
    if (!names.insert(name).second) throw std::invalid_argument("duplicate checkpoint name " + name);
    if (t.rank() > 255) throw std::invalid_argument("rank too large for checkpoint: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim(i)));
    const auto d = t.data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(float));
  }
  return out;
}

NamedTensors<float> parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) throw DataError("not a checkpoint: bad magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const auto count = r.get<std::uint32_t>("tensor count");
  NamedTensors<float> out;
  std::set<std::string> names;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(r.take(len, "name"));
    if (!names.insert(name).second) throw DataError("duplicate tensor name " + name);
    const auto rank = r.get<std::uint8_t>("rank");
    std::vector<int> ext;
    std::uint64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      const auto e = r.get<std::uint32_t>("extent");
      if (e > 0x7FFFFFFF) throw DataError("extent too large in " + name);
      ext.push_back(static_cast<int>(e));
      numel *= e;
      if (numel > (std::uint64_t{1} << 34)) throw DataError("tensor " + name + " is implausibly large");
    }
    const auto payload = r.take(numel * sizeof(float), "payload");
    std::vector<float> v(numel);
    std::memcpy(v.data(), payload.data(), payload.size());
    out.emplace_back(std::move(name), grad::Tensor<float>::from_data(grad::Shape(std::span<const int>(ext)), std::move(v)));
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint at byte " + std::to_string(r.pos()));
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors<float>& tensors) {
  write_file_atomic(path, serialize_checkpoint(tensors));
}

NamedTensors<float> load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void restore(const NamedTensors<float>& loaded, NamedTensors<float>& dest) {
  // check everything first so a bad file leaves the model untouched
  std::map<std::string, const grad::Tensor<float>*> index;
  for (const auto& [name, t] : loaded) index.emplace(name, &t);
  for (const auto& [name, t] : dest) {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError("checkpoint has no tensor " + name);
    if (it->second->shape() != t.shape())
      throw DataError("tensor " + name + " is " + it->second->shape().str() + " in the checkpoint, model expects " +
                      t.shape().str());
  }
  grad::copy_values(loaded, dest);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

std::string state_hash(const NamedTensors<float>& tensors) { return hex64(fnv1a(serialize_checkpoint(tensors))); }

}  // namespace raincap::harness
