#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "compad/training.hpp"

namespace compad {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr char kMagic[4] = {'C', 'A', 'D', 'W'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_block(std::ostream& os, const std::string& name, const Tensor& t) {
  put(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor meta_vector(std::span<const double> v) { return Tensor::vector({v.begin(), v.end()}); }

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }
  std::size_t offset() { return static_cast<std::size_t>(is_.tellg()); }

  template <class T>
  T get() {
    T v{};
    read(&v, sizeof v);
    return v;
  }
  void read(void* dst, std::size_t n) {
    const auto at = offset();
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw ParseError(ParseError::Kind::PayloadLength, at,
                       fmt::format("{}: truncated checkpoint", path_));
    }
  }

 private:
  std::istream& is_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const ModelConfig& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot write checkpoint {}", path.string()));
  os.write(kMagic, 4);
  put(os, kCheckpointVersion);

  const auto heads = c.resolved_heads();
  std::vector<double> h(heads.begin(), heads.end());
  put_block(os, "meta.feature_dim", Tensor::scalar(static_cast<double>(c.feature_dim)));
  put_block(os, "meta.num_classes", Tensor::scalar(static_cast<double>(c.num_classes)));
  put_block(os, "meta.hidden_dim", Tensor::scalar(static_cast<double>(c.hidden_dim)));
  put_block(os, "meta.scene_dim", Tensor::scalar(static_cast<double>(c.scene_dim)));
  put_block(os, "meta.heads", meta_vector(h));
  put_block(os, "meta.topology", Tensor::scalar(static_cast<double>(c.topology)));
  put_block(os, "meta.agg", Tensor::scalar(static_cast<double>(c.agg)));
  put_block(os, "meta.concat_last_layer", Tensor::scalar(c.concat_last_layer ? 1.0 : 0.0));
  put_block(os, "meta.leaky_slope", Tensor::scalar(c.leaky_slope));
  put_block(os, "meta.temporal_len", Tensor::scalar(static_cast<double>(c.temporal_len)));
  put_block(os, "meta.kernel_size", Tensor::scalar(static_cast<double>(c.kernel_size)));
  for (const auto& [name, t] : params.named()) put_block(os, name, *t);
  if (!os) throw IoError(fmt::format("failed writing checkpoint {}", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open checkpoint {}", path.string()));
  Reader r(is, path.string());

  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError(ParseError::Kind::Magic, 0,
                       fmt::format("{}: not a checkpoint (bad magic)", path.string()));
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError(ParseError::Kind::Version, 4,
                       fmt::format("{}: checkpoint version {} (expected {})", path.string(),
                                 version, kCheckpointVersion));
  }

  std::map<std::string, Tensor> blocks;
  while (!r.at_end()) {
    const auto at = r.offset();
    const auto len = r.get<std::uint32_t>();
    if (len == 0 || len > 4096) {
      throw ParseError(ParseError::Kind::Schema, at,
                       fmt::format("{}: bad block name length {}", path.string(), len));
    }
    std::string name(len, '\0');
    r.read(name.data(), len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) {
      throw ParseError(ParseError::Kind::Schema, at,
                       fmt::format("{}: block '{}' has rank {}", path.string(), name, rank));
    }
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    Tensor t(shape);
    r.read(t.data().data(), t.size() * sizeof(double));
    blocks.insert_or_assign(std::move(name), std::move(t));
  }

  auto meta = [&](const std::string& key) -> const Tensor& {
    auto it = blocks.find("meta." + key);
    if (it == blocks.end()) {
      throw ParseError(ParseError::Kind::Schema, 0,
                       fmt::format("{}: missing meta.{}", path.string(), key));
    }
    return it->second;
  };
  auto meta_size = [&](const std::string& key) {
    return static_cast<std::size_t>(meta(key).item());
  };

  Checkpoint cp;
  ModelConfig& c = cp.config;
  c.feature_dim = meta_size("feature_dim");
  c.num_classes = meta_size("num_classes");
  c.hidden_dim = meta_size("hidden_dim");
  c.scene_dim = meta_size("scene_dim");
  c.heads.clear();
  for (double h : meta("heads").data()) c.heads.push_back(static_cast<std::size_t>(h));
  const auto topo = meta_size("topology"), agg = meta_size("agg");
  if (topo > static_cast<std::size_t>(Topology::StarPlus) ||
      agg > static_cast<std::size_t>(AggMode::Scene)) {
    throw ParseError(ParseError::Kind::Schema, 0,
                     fmt::format("{}: unknown topology or aggregation code", path.string()));
  }
  c.topology = static_cast<Topology>(topo);
  c.agg = static_cast<AggMode>(agg);
  c.concat_last_layer = meta("concat_last_layer").item() != 0.0;
  c.leaky_slope = meta("leaky_slope").item();
  c.temporal_len = meta_size("temporal_len");
  c.kernel_size = meta_size("kernel_size");
  validate(c);

  cp.params = init_model(c, 0);
  for (auto& [name, t] : cp.params.named()) {
    auto it = blocks.find(name);
    if (it == blocks.end()) {
      throw ParseError(ParseError::Kind::Schema, 0,
                       fmt::format("{}: missing parameter '{}'", path.string(), name));
    }
    if (it->second.shape() != t->shape()) {
      throw ParseError(ParseError::Kind::Schema, 0,
                       fmt::format("{}: parameter '{}' has shape {} (expected {})",
                                   path.string(), name, shape_string(it->second.shape()),
                                   shape_string(t->shape())));
    }
    *t = std::move(it->second);
  }
  return cp;
}

}  // namespace compad
