#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "compad/error.hpp"
#include "compad/scene_data.hpp"

namespace compad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'A', 'D', 'F'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::vector<char>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t get_u32(const std::vector<char>& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  }
  return v;
}

double get_f32(const std::vector<char>& in, std::size_t off) {
  return static_cast<double>(std::bit_cast<float>(get_u32(in, off)));
}

std::size_t video_payload_bytes(std::size_t d,
                                const std::vector<std::size_t>& agents_per_snippet) {
  std::size_t words = 0;
  for (auto n : agents_per_snippet) words += d + n * (2 + d);
  return words * 4;
}

fs::path features_path(const fs::path& manifest) {
  return manifest.parent_path() / "features.bin";
}

void write_file(const fs::path& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed for " + path.string());
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) {
    throw ParseError(ParseError::Kind::Schema, 0,
                     fmt::format("{}: missing field '{}'", where, key));
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::Schema, 0,
                     fmt::format("{}: field '{}' has the wrong type ({})", where, key,
                                 e.what()));
  }
}

}  // namespace

std::size_t cadf_payload_size(const Dataset& ds) {
  std::size_t bytes = kHeaderBytes;
  for (const auto& v : ds.videos) {
    std::vector<std::size_t> counts;
    for (const auto& s : v.snippets) counts.push_back(s.agents.size());
    bytes += video_payload_bytes(ds.feature_dim, counts);
  }
  return bytes;
}

void save_dataset(const Dataset& ds, const fs::path& manifest_path) {
  validate(ds);
  std::vector<char> bin;
  bin.reserve(cadf_payload_size(ds));
  bin.insert(bin.end(), kMagic, kMagic + 4);
  put_u32(bin, kCadfVersion);
  put_u32(bin, static_cast<std::uint32_t>(ds.feature_dim));
  put_u32(bin, static_cast<std::uint32_t>(ds.videos.size()));

  json videos = json::array();
  for (const auto& v : ds.videos) {
    json jv;
    jv["id"] = v.video_id;
    jv["num_snippets"] = v.snippets.size();
    jv["offset"] = bin.size();
    json gt = json::array();
    for (const auto& g : v.ground_truth) {
      gt.push_back({g.activity_class, g.start_snippet, g.end_snippet});
    }
    jv["gt"] = gt;
    json agents = json::array();
    for (const auto& s : v.snippets) {
      agents.push_back(s.agents.size());
      for (double x : s.scene_feature) put_f32(bin, x);
      for (const auto& a : s.agents) {
        put_u32(bin, static_cast<std::uint32_t>(a.agent_class));
        put_u32(bin, static_cast<std::uint32_t>(a.tube_length));
        for (double x : a.feature) put_f32(bin, x);
      }
    }
    jv["agents_per_snippet"] = agents;
    videos.push_back(std::move(jv));
  }

  json manifest;
  manifest["magic"] = "CADF";
  manifest["version"] = kCadfVersion;
  manifest["feature_dim"] = ds.feature_dim;
  manifest["num_activity_classes"] = ds.num_activity_classes;
  manifest["num_agent_classes"] = ds.num_agent_classes;
  manifest["activity_classes"] = ds.activity_class_names;
  manifest["agent_classes"] = ds.agent_class_names;
  manifest["snippet_len"] = ds.snippet_len;
  manifest["multi_label"] = ds.multi_label;
  manifest["videos"] = std::move(videos);

  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  const std::string text = manifest.dump(2) + "\n";
  write_file(manifest_path, text.data(), text.size());
  write_file(features_path(manifest_path), bin.data(), bin.size());
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open manifest " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw ParseError(ParseError::Kind::Schema, 0,
                     fmt::format("{}: invalid JSON ({})", manifest_path.string(), e.what()));
  }
  const std::string where = manifest_path.string();
  if (field<std::string>(manifest, "magic", where) != "CADF") {
    throw ParseError(ParseError::Kind::Magic, 0, where + ": manifest magic is not CADF");
  }
  if (field<std::uint32_t>(manifest, "version", where) != kCadfVersion) {
    throw ParseError(ParseError::Kind::Version, 0,
                     fmt::format("{}: unsupported manifest version", where));
  }

  Dataset ds;
  ds.feature_dim = field<std::size_t>(manifest, "feature_dim", where);
  ds.num_activity_classes = field<std::size_t>(manifest, "num_activity_classes", where);
  ds.num_agent_classes = field<std::size_t>(manifest, "num_agent_classes", where);
  ds.activity_class_names = field<std::vector<std::string>>(manifest, "activity_classes", where);
  ds.agent_class_names = field<std::vector<std::string>>(manifest, "agent_classes", where);
  ds.snippet_len = manifest.value("snippet_len", std::size_t{0});
  ds.multi_label = manifest.value("multi_label", false);
  if (ds.feature_dim == 0) {
    throw ParseError(ParseError::Kind::FeatureDim, 0, where + ": feature_dim is 0");
  }

  const fs::path bin_path = features_path(manifest_path);
  std::ifstream bf(bin_path, std::ios::binary);
  if (!bf) throw IoError("cannot open payload " + bin_path.string());
  std::vector<char> bin((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  if (bin.size() < kHeaderBytes) {
    throw ParseError(ParseError::Kind::PayloadLength, bin.size(),
                     bin_path.string() + ": truncated header");
  }
  if (std::memcmp(bin.data(), kMagic, 4) != 0) {
    throw ParseError(ParseError::Kind::Magic, 0, bin_path.string() + ": payload magic is not CADF");
  }
  if (get_u32(bin, 4) != kCadfVersion) {
    throw ParseError(ParseError::Kind::Version, 4,
                     fmt::format("{}: unsupported payload version {}", bin_path.string(),
                                 get_u32(bin, 4)));
  }

  const json& jvideos = manifest.at("videos");
  if (!jvideos.is_array()) {
    throw ParseError(ParseError::Kind::Schema, 0, where + ": 'videos' is not an array");
  }

  struct Layout {
    std::size_t offset;
    std::vector<std::size_t> agents;
  };
  std::vector<Layout> layouts;
  std::size_t cursor = kHeaderBytes;
  for (const json& jv : jvideos) {
    VideoSample video;
    video.video_id = field<std::string>(jv, "id", where);
    const std::string vwhere = fmt::format("{}: video '{}'", where, video.video_id);
    const auto num_snippets = field<std::size_t>(jv, "num_snippets", vwhere);
    Layout lay{field<std::size_t>(jv, "offset", vwhere),
               field<std::vector<std::size_t>>(jv, "agents_per_snippet", vwhere)};
    if (lay.agents.size() != num_snippets) {
      throw ParseError(ParseError::Kind::Schema, 0,
                       fmt::format("{}: agents_per_snippet has {} entries for {} snippets",
                                   vwhere, lay.agents.size(), num_snippets));
    }
    for (const auto& g : field<std::vector<std::array<long long, 3>>>(jv, "gt", vwhere)) {
      if (g[0] < 0 || g[1] < 0 || g[2] < 0) {
        throw ParseError(ParseError::Kind::Schema, 0, vwhere + ": negative GT entry");
      }
      video.ground_truth.push_back({static_cast<int>(g[0]), static_cast<std::size_t>(g[1]),
                                    static_cast<std::size_t>(g[2])});
    }
    const std::size_t bytes = video_payload_bytes(ds.feature_dim, lay.agents);
    if (lay.offset != cursor) {
      throw ParseError(ParseError::Kind::PayloadLength, lay.offset,
                       fmt::format("{}: payload offset {} but previous data ends at {}",
                                   vwhere, lay.offset, cursor));
    }
    const bool is_last = layouts.size() + 1 == jvideos.size();
    std::size_t end = bin.size();
    if (!is_last) {
      end = jvideos[layouts.size() + 1].value("offset", bin.size());
    }
    if (lay.offset + bytes != end || lay.offset + bytes > bin.size()) {
      const std::uint32_t header_d = get_u32(bin, 8);
      if (header_d != ds.feature_dim && end >= lay.offset &&
          video_payload_bytes(header_d, lay.agents) == end - lay.offset) {
        throw ParseError(ParseError::Kind::FeatureDim, lay.offset,
                         fmt::format("{}: payload is sized for D = {}, manifest declares D = {}",
                                     vwhere, header_d, ds.feature_dim));
      }
      throw ParseError(
          ParseError::Kind::PayloadLength, lay.offset,
          fmt::format("{}: expected {} payload bytes for D = {}, found {}", vwhere, bytes,
                      ds.feature_dim, end > lay.offset ? end - lay.offset : 0));
    }
    cursor = lay.offset + bytes;
    video.snippets.resize(num_snippets);
    ds.videos.push_back(std::move(video));
    layouts.push_back(std::move(lay));
  }
  if (cursor != bin.size()) {
    throw ParseError(ParseError::Kind::PayloadLength, cursor,
                     fmt::format("{}: {} trailing bytes", bin_path.string(), bin.size() - cursor));
  }
  if (get_u32(bin, 8) != ds.feature_dim) {
    throw ParseError(ParseError::Kind::FeatureDim, 8,
                     fmt::format("{}: payload feature_dim {} disagrees with manifest {}",
                                 bin_path.string(), get_u32(bin, 8), ds.feature_dim));
  }
  if (get_u32(bin, 12) != ds.videos.size()) {
    throw ParseError(ParseError::Kind::Schema, 12,
                     fmt::format("{}: payload holds {} videos, manifest lists {}",
                                 bin_path.string(), get_u32(bin, 12), ds.videos.size()));
  }

  const std::size_t d = ds.feature_dim;
  for (std::size_t vi = 0; vi < ds.videos.size(); ++vi) {
    std::size_t off = layouts[vi].offset;
    auto& video = ds.videos[vi];
    for (std::size_t si = 0; si < video.snippets.size(); ++si) {
      Snippet& s = video.snippets[si];
      s.index = si;
      s.scene_feature.resize(d);
      for (std::size_t k = 0; k < d; ++k, off += 4) s.scene_feature[k] = get_f32(bin, off);
      for (std::size_t a = 0; a < layouts[vi].agents[si]; ++a) {
        AgentTube tube;
        tube.tube_id = static_cast<int>(a);
        tube.agent_class = static_cast<int>(get_u32(bin, off));
        tube.tube_length = static_cast<int>(get_u32(bin, off + 4));
        off += 8;
        tube.feature.resize(d);
        for (std::size_t k = 0; k < d; ++k, off += 4) tube.feature[k] = get_f32(bin, off);
        s.agents.push_back(std::move(tube));
      }
    }
  }
  try {
    validate(ds);
  } catch (const ConfigError& e) {
    throw ParseError(ParseError::Kind::Schema, 0, where + ": " + e.what());
  }
  return ds;
}

}  // namespace compad
