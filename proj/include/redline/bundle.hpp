#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "redline/error.hpp"
#include "redline/model.hpp"

namespace redline {

namespace io {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

inline std::vector<std::uint32_t> read_words(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % 4 != 0)
    throw Error(ErrorKind::format, path.string() + " length is not a multiple of 4 bytes");
  std::vector<std::uint32_t> words(bytes / 4);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw Error(ErrorKind::io, "short read on " + path.string());
  for (auto& w : words) w = to_le(w);
  return words;
}

inline void write_words(const std::filesystem::path& path, const std::vector<std::uint32_t>& words) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  for (auto w : words) {
    std::uint32_t le = to_le(w);
    out.write(reinterpret_cast<const char*>(&le), 4);
  }
  if (!out) throw Error(ErrorKind::io, "write failed on " + path.string());
}

inline nlohmann::ordered_json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed on " + path.string());
}

// Appends to a word blob and returns the start offset (in elements).
class BlobWriter {
 public:
  std::size_t floats(const std::vector<float>& v) {
    std::size_t at = words.size();
    for (float f : v) words.push_back(std::bit_cast<std::uint32_t>(f));
    return at;
  }
  std::size_t u32(const std::vector<std::uint32_t>& v) {
    std::size_t at = words.size();
    words.insert(words.end(), v.begin(), v.end());
    return at;
  }
  std::vector<std::uint32_t> words;
};

class BlobReader {
 public:
  explicit BlobReader(const std::vector<std::uint32_t>& w) : words_(w), used_(w.size(), false) {}

  std::vector<float> floats(std::size_t offset, std::size_t count, std::size_t layer) {
    claim(offset, count, layer);
    std::vector<float> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = std::bit_cast<float>(words_[offset + i]);
    return v;
  }
  std::vector<std::uint32_t> u32(std::size_t offset, std::size_t count, std::size_t layer) {
    claim(offset, count, layer);
    return {words_.begin() + static_cast<std::ptrdiff_t>(offset),
            words_.begin() + static_cast<std::ptrdiff_t>(offset + count)};
  }
  std::size_t claimed() const { return claimed_; }

 private:
  void claim(std::size_t offset, std::size_t count, std::size_t layer) {
    if (offset > words_.size() || count > words_.size() - offset)
      throw Error(ErrorKind::format,
                  "blob has " + std::to_string(words_.size()) + " elements, manifest claims [" +
                      std::to_string(offset) + ", " + std::to_string(offset + count) + ")",
                  layer);
    for (std::size_t i = offset; i < offset + count; ++i) {
      if (used_[i]) throw Error(ErrorKind::format, "overlapping blob regions", layer);
      used_[i] = true;
    }
    claimed_ += count;
  }

  const std::vector<std::uint32_t>& words_;
  std::vector<bool> used_;
  std::size_t claimed_ = 0;
};

template <typename T>
T field(const nlohmann::ordered_json& j, const char* key, std::size_t layer) {
  if (!j.contains(key)) throw Error(ErrorKind::format, std::string("missing field '") + key + "'", layer);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::format, std::string("bad type for field '") + key + "'", layer);
  }
}

}  // namespace io

inline LayerKind parse_layer_kind(const std::string& s, std::size_t layer) {
  if (s == "dense") return LayerKind::dense;
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "depthwise") return LayerKind::depthwise;
  throw Error(ErrorKind::format, "unknown layer kind '" + s + "'", layer);
}

inline Padding parse_padding(const std::string& s, std::size_t layer) {
  if (s == "same") return Padding::same;
  if (s == "valid") return Padding::valid;
  throw Error(ErrorKind::format, "unknown padding '" + s + "'", layer);
}

inline Activation parse_activation(const std::string& s, std::size_t layer) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw Error(ErrorKind::format, "unknown activation '" + s + "'", layer);
}

// Bundle directory layout:
//   manifest.json  {version, input_shape?, layers:[...], skips:[[src,dst],...]}
//   weights.bin    little-endian 32-bit words; offsets in the manifest count elements.
// Per layer the blob holds weights (or, for split layers, the unique kernels of
// every input channel back to back), bias, bn mean, bn std, then the u32 dup maps.
inline void save_bundle(const NetworkGraph& net, const std::filesystem::path& dir) {
  validate(net);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());

  io::BlobWriter blob;
  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  if (net.input_shape) manifest["input_shape"] = *net.input_shape;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& layer : net.layers) {
    const auto& W = layer.weights;
    nlohmann::ordered_json e;
    e["kind"] = to_string(layer.kind);
    e["h"] = W.h;
    e["w"] = W.w;
    e["c_in"] = W.c_in;
    e["c_out"] = W.c_out;
    e["stride"] = layer.stride;
    e["padding"] = to_string(layer.padding);
    e["activation"] = to_string(layer.activation);
    e["prunable"] = layer.prunable;
    e["has_bn"] = layer.bn.has_value();
    nlohmann::ordered_json offsets;
    if (layer.split) {
      std::vector<float> all;
      for (const auto& k : layer.split->unique_kernels) all.insert(all.end(), k.begin(), k.end());
      offsets["unique_kernels"] = blob.floats(all);
    } else {
      offsets["weights"] = blob.floats(W.data);
    }
    offsets["bias"] = blob.floats(layer.bias);
    if (layer.bn) {
      offsets["bn_mean"] = blob.floats(layer.bn->mean);
      offsets["bn_std"] = blob.floats(layer.bn->std);
    }
    e["offsets"] = offsets;
    if (layer.split) {
      e["split"] = true;
      std::vector<std::size_t> counts, dup_offsets;
      for (std::size_t c = 0; c < W.c_in; ++c) counts.push_back(layer.split->unique_count(c));
      for (std::size_t c = 0; c < W.c_in; ++c) dup_offsets.push_back(blob.u32(layer.split->dup[c]));
      e["unique_counts"] = counts;
      e["dup_offsets"] = dup_offsets;
    }
    layers.push_back(e);
  }
  manifest["layers"] = layers;
  auto skips = nlohmann::ordered_json::array();
  for (const auto& s : net.skips) skips.push_back({s.source, s.target});
  manifest["skips"] = skips;

  io::write_words(dir / "weights.bin", blob.words);
  io::write_json(dir / "manifest.json", manifest);
}

inline NetworkGraph load_bundle(const std::filesystem::path& dir) {
  auto manifest_path = dir / "manifest.json";
  auto blob_path = dir / "weights.bin";
  if (!std::filesystem::exists(manifest_path))
    throw Error(ErrorKind::io, "missing " + manifest_path.string());
  if (!std::filesystem::exists(blob_path)) throw Error(ErrorKind::io, "missing " + blob_path.string());
  auto manifest = io::read_json(manifest_path);
  auto words = io::read_words(blob_path);

  if (!manifest.contains("version") || manifest["version"] != 1)
    throw Error(ErrorKind::format, "unsupported manifest version");
  if (!manifest.contains("layers") || !manifest["layers"].is_array())
    throw Error(ErrorKind::format, "manifest has no layer list");

  NetworkGraph net;
  if (manifest.contains("input_shape")) {
    auto s = manifest["input_shape"].get<std::vector<std::size_t>>();
    if (s.size() != 3) throw Error(ErrorKind::format, "input_shape must be [H, W, C]");
    net.input_shape = std::array<std::size_t, 3>{s[0], s[1], s[2]};
  }

  io::BlobReader reader(words);
  const auto& entries = manifest["layers"];
  for (std::size_t l = 0; l < entries.size(); ++l) {
    const auto& e = entries[l];
    LayerSpec layer;
    layer.kind = parse_layer_kind(io::field<std::string>(e, "kind", l), l);
    auto h = io::field<std::size_t>(e, "h", l);
    auto w = io::field<std::size_t>(e, "w", l);
    auto c_in = io::field<std::size_t>(e, "c_in", l);
    auto c_out = io::field<std::size_t>(e, "c_out", l);
    layer.stride = io::field<std::size_t>(e, "stride", l);
    layer.padding = parse_padding(io::field<std::string>(e, "padding", l), l);
    layer.activation = parse_activation(io::field<std::string>(e, "activation", l), l);
    layer.prunable = io::field<bool>(e, "prunable", l);
    bool has_bn = io::field<bool>(e, "has_bn", l);
    if (!e.contains("offsets")) throw Error(ErrorKind::format, "missing field 'offsets'", l);
    const auto& off = e["offsets"];
    bool split = e.value("split", false);
    const std::size_t ks = h * w;

    if (split) {
      auto counts = io::field<std::vector<std::size_t>>(e, "unique_counts", l);
      auto dup_offsets = io::field<std::vector<std::size_t>>(e, "dup_offsets", l);
      if (counts.size() != c_in || dup_offsets.size() != c_in)
        throw Error(ErrorKind::format, "split tables must have c_in entries", l);
      std::size_t total = 0;
      for (auto n : counts) total += n;
      auto all = reader.floats(io::field<std::size_t>(off, "unique_kernels", l), total * ks, l);
      SplitData sd;
      sd.kernel_size = ks;
      std::size_t at = 0;
      for (std::size_t c = 0; c < c_in; ++c) {
        sd.unique_kernels.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(at),
                                       all.begin() + static_cast<std::ptrdiff_t>(at + counts[c] * ks));
        at += counts[c] * ks;
        sd.dup.push_back(reader.u32(dup_offsets[c], c_out, l));
        for (auto d : sd.dup.back())
          if (d >= counts[c]) throw Error(ErrorKind::format, "dup index out of range", l);
      }
      // Dense weights are rebuilt from the decomposition.
      Tensor4 W(h, w, c_in, c_out);
      for (std::size_t c = 0; c < c_in; ++c)
        for (std::size_t j = 0; j < c_out; ++j) {
          auto k = sd.unique_kernel(c, sd.dup[c][j]);
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) W.at(y, x, c, j) = k[y * w + x];
        }
      layer.weights = std::move(W);
      layer.split = std::move(sd);
    } else {
      layer.weights = Tensor4(h, w, c_in, c_out,
                              reader.floats(io::field<std::size_t>(off, "weights", l), h * w * c_in * c_out, l));
    }
    layer.bias = reader.floats(io::field<std::size_t>(off, "bias", l), c_out, l);
    if (has_bn) {
      BatchNormStats bn;
      bn.mean = reader.floats(io::field<std::size_t>(off, "bn_mean", l), c_out, l);
      bn.std = reader.floats(io::field<std::size_t>(off, "bn_std", l), c_out, l);
      layer.bn = std::move(bn);
    }
    net.layers.push_back(std::move(layer));
  }
  if (reader.claimed() != words.size())
    throw Error(ErrorKind::format, "weights.bin holds " + std::to_string(words.size()) +
                                       " elements but the manifest accounts for " +
                                       std::to_string(reader.claimed()));
  if (manifest.contains("skips")) {
    for (const auto& s : manifest["skips"]) {
      if (!s.is_array() || s.size() != 2) throw Error(ErrorKind::format, "skip entries must be [src, dst]");
      net.skips.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
    }
  }
  validate(net);
  return net;
}

// Labelled evaluation set: samples.bin (f32), labels.bin (u32), dataset.json
// {count, shape:[H, W, C]}.
struct Dataset {
  std::size_t height = 1, width = 1, channels = 0;
  std::vector<FeatureMap> samples;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return samples.size(); }
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  auto meta = io::read_json(dir / "dataset.json");
  Dataset ds;
  std::size_t count = 0;
  std::vector<std::size_t> shape;
  try {
    count = meta.at("count").get<std::size_t>();
    shape = meta.at("shape").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("dataset.json: ") + e.what());
  }
  if (shape.size() != 3) throw Error(ErrorKind::format, "dataset shape must be [H, W, C]");
  ds.height = shape[0];
  ds.width = shape[1];
  ds.channels = shape[2];
  const std::size_t item = ds.height * ds.width * ds.channels;
  auto samples = io::read_words(dir / "samples.bin");
  auto labels = io::read_words(dir / "labels.bin");
  if (samples.size() != count * item)
    throw Error(ErrorKind::format, "samples.bin length does not match count * H * W * C");
  if (labels.size() != count) throw Error(ErrorKind::format, "labels.bin length does not match count");
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<float> v(item);
    for (std::size_t k = 0; k < item; ++k) {
      v[k] = std::bit_cast<float>(samples[i * item + k]);
      if (!std::isfinite(v[k])) throw Error(ErrorKind::non_finite, "non-finite dataset sample");
    }
    ds.samples.emplace_back(ds.height, ds.width, ds.channels, std::move(v));
  }
  ds.labels = std::move(labels);
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string());
  if (ds.labels.size() != ds.samples.size()) throw Error(ErrorKind::shape, "one label per sample required");
  io::BlobWriter samples;
  for (const auto& s : ds.samples) {
    if (s.height != ds.height || s.width != ds.width || s.channels != ds.channels)
      throw Error(ErrorKind::shape, "sample shape differs from dataset shape");
    samples.floats(s.data);
  }
  io::write_words(dir / "samples.bin", samples.words);
  io::write_words(dir / "labels.bin", ds.labels);
  nlohmann::ordered_json meta;
  meta["count"] = ds.samples.size();
  meta["shape"] = {ds.height, ds.width, ds.channels};
  io::write_json(dir / "dataset.json", meta);
}

}  // namespace redline
