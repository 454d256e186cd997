// Model assembly: the Basic Network (strided stem + five conv blocks +
// bilinear pooling + linear head) and the five pipeline stages.
//
//   S1  : OD -> stain deconvolution -> BasicNetwork(3)
//   S2  : OD -> SD -> DCT branch -> BasicNetwork(3)
//   S2C : OD -> SD -> [identity || DCT] -> concat -> BasicNetwork(6)
//   S3  : frozen S1 + frozen S2 features -> new linear head
//   S3C : frozen S1 + frozen S2C features -> new linear head
//
// Channel plan: 5x5/2 stem to 16 channels, then 3x3 blocks
// 16->32->64->64->128->128 with batchnorm + activation, 2x2 maxpool after
// blocks 1, 2, 3 and 5. Bilinear feature width is 128^2.
//
// Checkpoints are a versioned binary container; see README for the byte
// layout. Loading refuses files whose stored config hash does not match the
// embedded config text, and callers can additionally demand an expected
// configuration.
#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "leukonet/data.hpp"
#include "leukonet/dct.hpp"
#include "leukonet/nn.hpp"
#include "leukonet/stain.hpp"

namespace leukonet {

inline constexpr std::uint64_t kDefaultSeed = 1729;

enum class StageKind { S1, S2, S2C, S3, S3C };

inline const char* stage_name(StageKind s) {
  switch (s) {
    case StageKind::S1: return "s1";
    case StageKind::S2: return "s2";
    case StageKind::S2C: return "s2c";
    case StageKind::S3: return "s3";
    case StageKind::S3C: return "s3c";
  }
  return "?";
}

inline StageKind parse_stage(const std::string& s) {
  if (s == "s1") return StageKind::S1;
  if (s == "s2") return StageKind::S2;
  if (s == "s2c") return StageKind::S2C;
  if (s == "s3") return StageKind::S3;
  if (s == "s3c") return StageKind::S3C;
  throw ConfigError("unknown stage '" + s + "' (expected s1|s2|s2c|s3|s3c)");
}

inline const char* stain_init_name(StainInit s) {
  switch (s) {
    case StainInit::Identity: return "identity";
    case StainInit::SeededRandom: return "seeded-random";
    case StainInit::Standard: return "standard-stain";
  }
  return "?";
}

inline StainInit parse_stain_init(const std::string& s) {
  if (s == "identity") return StainInit::Identity;
  if (s == "seeded-random" || s == "random") return StainInit::SeededRandom;
  if (s == "standard-stain" || s == "standard") return StainInit::Standard;
  throw ConfigError("unknown stain init '" + s +
                    "' (expected standard-stain|identity|seeded-random)");
}

struct StageConfig {
  StageKind stage = StageKind::S1;
  ActivationKind activation = ActivationKind::ReLU;
  AugmentMode augmentation = AugmentMode::None;
  bool bilinear_signed_sqrt = true;
  bool bilinear_l2 = true;
  std::int64_t input_size = 350;
  StainInit stain_init = StainInit::Standard;
  std::string stain_file;           // optional override for standard-stain
  bool sd_trainable = true;
  bool train_sd_through_dct = true; // Stage-2/2C: gradient path through the DCT
  DctConfig dct;

  std::int64_t in_channels() const { return stage == StageKind::S2C ? 6 : 3; }

  // Canonical text form; the checkpoint config hash is FNV-1a of exactly this.
  std::string serialize() const {
    std::ostringstream os;
    os << "stage=" << stage_name(stage) << '\n'
       << "activation=" << activation_name(activation) << '\n'
       << "augmentation=" << augment_mode_name(augmentation) << '\n'
       << "bilinear_signed_sqrt=" << (bilinear_signed_sqrt ? 1 : 0) << '\n'
       << "bilinear_l2=" << (bilinear_l2 ? 1 : 0) << '\n'
       << "input_size=" << input_size << '\n'
       << "stain_init=" << stain_init_name(stain_init) << '\n'
       << "sd_trainable=" << (sd_trainable ? 1 : 0) << '\n'
       << "train_sd_through_dct=" << (train_sd_through_dct ? 1 : 0) << '\n'
       << "dct_energy_fraction=" << fmt_fixed(dct.energy_fraction, 6) << '\n'
       << "dct_replacement_value=" << fmt_fixed(dct.replacement_value, 6) << '\n'
       << "dct_log_clamp_floor=" << fmt_fixed(dct.log_clamp_floor, 6) << '\n'
       << "channels=16,32,64,64,128,128\n"
       << "pools=1,2,3,5\n";
    return os.str();
  }

  static StageConfig parse(const std::string& text) {
    StageConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("bad config line: " + line);
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "stage") cfg.stage = parse_stage(value);
      else if (key == "activation") cfg.activation = parse_activation(value);
      else if (key == "augmentation") cfg.augmentation = parse_augment_mode(value);
      else if (key == "bilinear_signed_sqrt") cfg.bilinear_signed_sqrt = value == "1";
      else if (key == "bilinear_l2") cfg.bilinear_l2 = value == "1";
      else if (key == "input_size") cfg.input_size = std::stoll(value);
      else if (key == "stain_init") cfg.stain_init = parse_stain_init(value);
      else if (key == "sd_trainable") cfg.sd_trainable = value == "1";
      else if (key == "train_sd_through_dct") cfg.train_sd_through_dct = value == "1";
      else if (key == "dct_energy_fraction") cfg.dct.energy_fraction = std::stod(value);
      else if (key == "dct_replacement_value") cfg.dct.replacement_value = std::stod(value);
      else if (key == "dct_log_clamp_floor") cfg.dct.log_clamp_floor = std::stod(value);
      else if (key == "channels" || key == "pools") { /* fixed plan, informational */ }
      else throw ConfigError("unknown config key: " + key);
    }
    return cfg;
  }

  std::uint64_t hash() const { return fnv1a64(serialize()); }
};

// ---------------------------------------------------------------------------
// Basic Network
// ---------------------------------------------------------------------------

struct ConvBlock {
  Conv2dParams conv;
  BatchNormParams bn;
  ActivationParams act;
  bool pool = false;
};

struct BasicNetwork {
  Conv2dParams stem;
  std::vector<ConvBlock> blocks;
  LinearParams head;
  bool bilinear_signed_sqrt = true;
  bool bilinear_l2 = true;
  std::int64_t feature_channels = 128;

  // Post-bilinear, pre-classifier vector: n x feature_channels^2.
  Tensor features(const Tensor& x, bool training) {
    Tensor h = conv2d(x, stem);
    for (auto& block : blocks) {
      h = conv2d(h, block.conv);
      h = batchnorm2d(h, block.bn, training);
      h = activation(h, block.act);
      if (block.pool) h = maxpool2d(h, 2, 2);
    }
    return bilinear_pool(h, bilinear_signed_sqrt, bilinear_l2);
  }

  Tensor forward(const Tensor& x, bool training) {
    return linear(features(x, training), head);
  }
};

inline BasicNetwork build_basic_network(std::int64_t in_channels, const StageConfig& cfg,
                                        Rng& rng) {
  if (in_channels != 3 && in_channels != 6)
    throw ConfigError("build_basic_network: in_channels must be 3 or 6, got " +
                      std::to_string(in_channels));
  static constexpr std::array<std::int64_t, 5> kChannels = {32, 64, 64, 128, 128};
  static constexpr std::array<bool, 5> kPool = {true, true, true, false, true};

  BasicNetwork net;
  net.bilinear_signed_sqrt = cfg.bilinear_signed_sqrt;
  net.bilinear_l2 = cfg.bilinear_l2;
  net.stem = Conv2dParams::create(16, in_channels, 5, 5, /*stride=*/2, /*padding=*/2, rng);
  std::int64_t prev = 16;
  for (int b = 0; b < 5; ++b) {
    ConvBlock block;
    const std::int64_t ch = kChannels[static_cast<std::size_t>(b)];
    block.conv = Conv2dParams::create(ch, prev, 3, 3, 1, 1, rng);
    block.bn = BatchNormParams::create(ch);
    block.act = ActivationParams::create(cfg.activation, ch);
    block.pool = kPool[static_cast<std::size_t>(b)];
    net.blocks.push_back(std::move(block));
    prev = ch;
  }
  net.feature_channels = prev;
  net.head = LinearParams::create(2, prev * prev, rng);
  return net;
}

// ---------------------------------------------------------------------------
// Stage models
// ---------------------------------------------------------------------------

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct StageModel {
  StageConfig cfg;
  StainMatrix stain;
  BasicNetwork net;
  bool training_mode = false;

  void set_train() { training_mode = true; }
  void set_eval() { training_mode = false; }

  // SD output (stain quantities) for an rgb batch in [0, 255].
  Tensor sd_output(const Tensor& rgb) const {
    return stain_deconvolve(rgb_to_od(rgb), stain.m);
  }

  Tensor network_input(const Tensor& rgb) const {
    Tensor q = sd_output(rgb);
    switch (cfg.stage) {
      case StageKind::S1: return q;
      case StageKind::S2:
        return dct_layer_forward(cfg.train_sd_through_dct ? q : detach(q), cfg.dct);
      case StageKind::S2C: {
        Tensor d = dct_layer_forward(cfg.train_sd_through_dct ? q : detach(q), cfg.dct);
        return concat_channels(q, d);
      }
      default:
        throw ContractError("network_input: hybrid stages have no single network");
    }
  }

  Tensor forward(const Tensor& rgb) { return net.forward(network_input(rgb), training_mode); }

  Tensor features(const Tensor& rgb) { return net.features(network_input(rgb), training_mode); }

  NamedTensors named_parameters() const {
    NamedTensors out;
    out.emplace_back("stain.m", stain.m);
    out.emplace_back("net.stem.weight", net.stem.weight);
    out.emplace_back("net.stem.bias", net.stem.bias);
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
      const std::string p = "net.block" + std::to_string(b + 1) + ".";
      const auto& block = net.blocks[b];
      out.emplace_back(p + "conv.weight", block.conv.weight);
      out.emplace_back(p + "conv.bias", block.conv.bias);
      out.emplace_back(p + "bn.gamma", block.bn.gamma);
      out.emplace_back(p + "bn.beta", block.bn.beta);
      if (block.act.kind == ActivationKind::PReLU)
        out.emplace_back(p + "act.prelu_slope", block.act.prelu_slope);
      if (block.act.kind == ActivationKind::PTELU) {
        out.emplace_back(p + "act.ptelu_alpha", block.act.ptelu_alpha);
        out.emplace_back(p + "act.ptelu_beta", block.act.ptelu_beta);
      }
    }
    out.emplace_back("net.head.weight", net.head.weight);
    out.emplace_back("net.head.bias", net.head.bias);
    return out;
  }

  NamedTensors named_buffers() const {
    NamedTensors out;
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
      const std::string p = "net.block" + std::to_string(b + 1) + ".bn.";
      out.emplace_back(p + "running_mean", net.blocks[b].bn.running_mean);
      out.emplace_back(p + "running_var", net.blocks[b].bn.running_var);
    }
    return out;
  }

  NamedTensors named_state() const {
    NamedTensors out = named_parameters();
    for (auto& nb : named_buffers()) out.push_back(nb);
    return out;
  }

  std::vector<Tensor> trainable_parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) {
      if (name == "stain.m" && !cfg.sd_trainable) continue;
      out.push_back(t);
    }
    return out;
  }

  void set_requires_grad(bool rg) {
    for (auto& [name, t] : named_parameters()) {
      Tensor tt = t;
      tt.set_requires_grad(rg && (name != "stain.m" || cfg.sd_trainable));
    }
  }

  void apply_constraints() {
    if (cfg.sd_trainable) stain.ensure_invertible();
    for (auto& block : net.blocks) block.act.apply_constraints();
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }
};

inline StageModel build_stage(const StageConfig& cfg, Rng& rng) {
  if (cfg.stage == StageKind::S3 || cfg.stage == StageKind::S3C)
    throw ConfigError("build_stage: hybrid stages need component checkpoints; use "
                      "build_hybrid");
  StageModel model;
  model.cfg = cfg;
  switch (cfg.stain_init) {
    case StainInit::Identity:
      model.stain = init_stain_matrix(StainInit::Identity);
      break;
    case StainInit::Standard:
      model.stain = init_stain_matrix(StainInit::Standard, nullptr, cfg.stain_file);
      break;
    case StainInit::SeededRandom:
      model.stain = init_stain_matrix(StainInit::SeededRandom, &rng);
      break;
  }
  {
    Tensor m = model.stain.m;
    m.set_requires_grad(cfg.sd_trainable);
  }
  model.net = build_basic_network(cfg.in_channels(), cfg, rng);
  return model;
}

// ---------------------------------------------------------------------------
// Hybrid models
// ---------------------------------------------------------------------------

struct HybridModel {
  StageKind stage = StageKind::S3C;
  AugmentMode augmentation = AugmentMode::None;
  StageModel comp_a;  // S1-type, frozen
  StageModel comp_b;  // S2 (S3) or S2C (S3C), frozen
  LinearParams fusion;
  bool training_mode = false;

  void set_train() { training_mode = true; }
  void set_eval() { training_mode = false; }

  Tensor forward(const Tensor& rgb) {
    // components always run in eval mode; only the fusion layer trains
    Tensor fa = comp_a.features(rgb);
    Tensor fb = comp_b.features(rgb);
    return linear(concat_cols(fa, fb), fusion);
  }

  NamedTensors named_parameters() const {
    NamedTensors out;
    for (auto& [n, t] : comp_a.named_parameters()) out.emplace_back("comp_a." + n, t);
    for (auto& [n, t] : comp_b.named_parameters()) out.emplace_back("comp_b." + n, t);
    out.emplace_back("fusion.weight", fusion.weight);
    out.emplace_back("fusion.bias", fusion.bias);
    return out;
  }

  NamedTensors named_state() const {
    NamedTensors out = named_parameters();
    for (auto& [n, t] : comp_a.named_buffers()) out.emplace_back("comp_a." + n, t);
    for (auto& [n, t] : comp_b.named_buffers()) out.emplace_back("comp_b." + n, t);
    return out;
  }

  std::vector<Tensor> trainable_parameters() const { return {fusion.weight, fusion.bias}; }

  void apply_constraints() {}

  std::string serialize_config() const {
    std::ostringstream os;
    os << "stage=" << stage_name(stage) << '\n'
       << "augmentation=" << augment_mode_name(augmentation) << '\n'
       << "[component_a]\n" << comp_a.cfg.serialize()
       << "[component_b]\n" << comp_b.cfg.serialize();
    return os.str();
  }
};

// Expected component kinds per hybrid: S3 fuses S1 + S2, S3C fuses S1 + S2C.
// Components may be passed in either order.
inline HybridModel build_hybrid(StageKind stage, StageModel a, StageModel b,
                                AugmentMode augmentation, Rng& rng) {
  if (stage != StageKind::S3 && stage != StageKind::S3C)
    throw ConfigError("build_hybrid: stage must be s3 or s3c");
  const StageKind want_b = stage == StageKind::S3 ? StageKind::S2 : StageKind::S2C;
  if (a.cfg.stage == want_b && b.cfg.stage == StageKind::S1) std::swap(a, b);
  if (a.cfg.stage != StageKind::S1 || b.cfg.stage != want_b)
    throw ConfigError(std::string("build_hybrid: ") + stage_name(stage) +
                      " needs components s1 + " + stage_name(want_b) + ", got " +
                      stage_name(a.cfg.stage) + " + " + stage_name(b.cfg.stage));
  HybridModel h;
  h.stage = stage;
  h.augmentation = augmentation;
  h.comp_a = std::move(a);
  h.comp_b = std::move(b);
  h.comp_a.set_eval();
  h.comp_b.set_eval();
  h.comp_a.set_requires_grad(false);
  h.comp_b.set_requires_grad(false);
  const std::int64_t fa = h.comp_a.net.feature_channels * h.comp_a.net.feature_channels;
  const std::int64_t fb = h.comp_b.net.feature_channels * h.comp_b.net.feature_channels;
  h.fusion = LinearParams::create(2, fa + fb, rng);
  return h;
}

// Post-bilinear-pooling, pre-classifier features of a trained component.
template <typename Model>
inline Tensor extract_features(Model& model, const Tensor& batch) {
  if (model.training_mode)
    throw ContractError("extract_features: model must be in eval mode");
  return model.features(batch);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct CheckpointData {
  std::uint32_t version = 1;
  StageKind stage = StageKind::S1;
  std::uint64_t config_hash = 0;
  double val_accuracy = 0;  // percent, best epoch
  std::string config_text;
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<Real> data;
  };
  std::vector<Entry> entries;

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

inline constexpr char kCheckpointMagic[8] = {'L', 'K', 'N', 'E', 'T', 'C', 'K', '1'};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

}  // namespace detail

inline void write_checkpoint(const CheckpointData& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, 8);
  detail::put<std::uint32_t>(os, ck.version);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.stage));
  detail::put<std::uint64_t>(os, fnv1a64(ck.config_text));
  detail::put<double>(os, ck.val_accuracy);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.config_text.size()));
  os.write(ck.config_text.data(), static_cast<std::streamsize>(ck.config_text.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put<std::int64_t>(os, d);
  }
  for (const auto& e : ck.entries) {
    for (Real v : e.data) detail::put<double>(os, static_cast<double>(v));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ConfigError("not a leukonet checkpoint: " + path);
  CheckpointData ck;
  ck.version = detail::get<std::uint32_t>(is);
  if (ck.version != 1)
    throw ConfigError("unsupported checkpoint version " + std::to_string(ck.version));
  ck.stage = static_cast<StageKind>(detail::get<std::uint32_t>(is));
  ck.config_hash = detail::get<std::uint64_t>(is);
  ck.val_accuracy = detail::get<double>(is);
  const auto text_len = detail::get<std::uint32_t>(is);
  ck.config_text.resize(text_len);
  is.read(ck.config_text.data(), text_len);
  if (!is) throw IoError("checkpoint truncated: " + path);
  if (fnv1a64(ck.config_text) != ck.config_hash)
    throw ConfigError("checkpoint config hash mismatch in " + path +
                      " (file corrupt or config tampered)");
  const auto n_entries = detail::get<std::uint32_t>(is);
  ck.entries.resize(n_entries);
  for (auto& e : ck.entries) {
    const auto name_len = detail::get<std::uint32_t>(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const auto ndim = detail::get<std::uint32_t>(is);
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = detail::get<std::int64_t>(is);
  }
  for (auto& e : ck.entries) {
    e.data.resize(static_cast<std::size_t>(numel(e.shape)));
    for (auto& v : e.data) v = static_cast<Real>(detail::get<double>(is));
  }
  return ck;
}

namespace detail {

inline void collect_entries(const NamedTensors& state, CheckpointData& ck) {
  for (const auto& [name, t] : state) {
    CheckpointData::Entry e;
    e.name = name;
    e.shape = t.shape();
    e.data.assign(t.data().begin(), t.data().end());
    ck.entries.push_back(std::move(e));
  }
}

inline void restore_entries(const CheckpointData& ck, const NamedTensors& state) {
  for (auto& [name, t] : state) {
    const auto* e = ck.find(name);
    if (!e) throw ConfigError("checkpoint missing entry " + name);
    if (e->shape != t.shape())
      throw ConfigError("checkpoint entry " + name + " has shape " + shape_str(e->shape) +
                        ", expected " + shape_str(t.shape()));
    Tensor tt = t;
    std::copy(e->data.begin(), e->data.end(), tt.mutable_data().begin());
  }
  // anything extra in the file means the configs do not actually match
  if (ck.entries.size() != state.size())
    throw ConfigError("checkpoint holds " + std::to_string(ck.entries.size()) +
                      " entries, model expects " + std::to_string(state.size()));
}

}  // namespace detail

inline CheckpointData make_checkpoint(const StageModel& model, double val_accuracy) {
  CheckpointData ck;
  ck.stage = model.cfg.stage;
  ck.config_text = model.cfg.serialize();
  ck.config_hash = fnv1a64(ck.config_text);
  ck.val_accuracy = val_accuracy;
  detail::collect_entries(model.named_state(), ck);
  return ck;
}

inline CheckpointData make_checkpoint(const HybridModel& model, double val_accuracy) {
  CheckpointData ck;
  ck.stage = model.stage;
  ck.config_text = model.serialize_config();
  ck.config_hash = fnv1a64(ck.config_text);
  ck.val_accuracy = val_accuracy;
  detail::collect_entries(model.named_state(), ck);
  return ck;
}

inline StageModel stage_model_from_checkpoint(const CheckpointData& ck) {
  if (ck.stage == StageKind::S3 || ck.stage == StageKind::S3C)
    throw ConfigError("checkpoint holds a hybrid model; load it as one");
  StageConfig cfg = StageConfig::parse(ck.config_text);
  Rng rng(0);  // weights are overwritten below
  StageModel model = build_stage(cfg, rng);
  detail::restore_entries(ck, model.named_state());
  model.set_eval();
  return model;
}

inline HybridModel hybrid_model_from_checkpoint(const CheckpointData& ck) {
  if (ck.stage != StageKind::S3 && ck.stage != StageKind::S3C)
    throw ConfigError("checkpoint holds a single-stage model; load it as one");
  // split the config text into hybrid header and the two component blocks
  const auto pa = ck.config_text.find("[component_a]\n");
  const auto pb = ck.config_text.find("[component_b]\n");
  if (pa == std::string::npos || pb == std::string::npos)
    throw ConfigError("hybrid checkpoint lacks component configs");
  const std::string header = ck.config_text.substr(0, pa);
  StageConfig cfg_a = StageConfig::parse(
      ck.config_text.substr(pa + 14, pb - pa - 14));
  StageConfig cfg_b = StageConfig::parse(ck.config_text.substr(pb + 14));
  AugmentMode aug = AugmentMode::None;
  {
    std::istringstream in(header);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("augmentation=", 0) == 0)
        aug = parse_augment_mode(line.substr(13));
    }
  }
  Rng rng(0);
  HybridModel h = build_hybrid(ck.stage, build_stage(cfg_a, rng), build_stage(cfg_b, rng),
                               aug, rng);
  detail::restore_entries(ck, h.named_state());
  h.set_eval();
  h.comp_a.set_requires_grad(false);
  h.comp_b.set_requires_grad(false);
  return h;
}

// Loads a component checkpoint and refuses it if the stored hash differs from
// the expected configuration's hash.
inline StageModel load_stage_checkpoint_expecting(const std::string& path,
                                                  const StageConfig& expected) {
  CheckpointData ck = read_checkpoint(path);
  if (ck.config_hash != expected.hash())
    throw ConfigError("checkpoint " + path + " config hash " +
                      std::to_string(ck.config_hash) + " does not match expected " +
                      std::to_string(expected.hash()));
  return stage_model_from_checkpoint(ck);
}

// FNV-1a over the raw bytes of the named tensors, for freeze audits.
inline std::uint64_t parameter_hash(const NamedTensors& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : tensors) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.data().data(), t.data().size() * sizeof(Real), h);
  }
  return h;
}

}  // namespace leukonet
