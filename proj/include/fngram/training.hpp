#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fngram/corpus.hpp"
#include "fngram/model.hpp"
#include "fngram/tensor.hpp"
#include "fngram/util.hpp"

namespace fngram {

/// Weighted sum over streams of the mean next-token cross-entropy, stream j
/// scored against targets shifted j positions ahead. Pad targets and
/// positions past the sequence end contribute nothing.
template <typename T>
Tensor<T> future_ngram_loss(const std::vector<Tensor<T>>& stream_logits,
                            const std::vector<int>& targets, const std::vector<double>& alpha,
                            int pad_id) {
  if (alpha.size() != stream_logits.size())
    throw ContractError("future_ngram_loss: " + std::to_string(alpha.size()) +
                        " alpha weights for " + std::to_string(stream_logits.size()) +
                        " streams");
  const std::size_t t_len = targets.size();
  Tensor<T> total;
  for (std::size_t j = 0; j < stream_logits.size(); ++j) {
    if (j >= t_len) break;  // no position has a target j steps ahead
    const Tensor<T>& logits = stream_logits[j];
    if (logits.shape()[0] != t_len)
      throw ShapeError("future_ngram_loss: stream " + std::to_string(j) + " has " +
                       std::to_string(logits.shape()[0]) + " rows for " +
                       std::to_string(t_len) + " targets");
    const std::vector<int> shifted(targets.begin() + static_cast<std::ptrdiff_t>(j),
                                   targets.end());
    const Tensor<T> ce =
        cross_entropy(slice_rows(logits, 0, t_len - j), shifted, pad_id);
    const Tensor<T> weighted = scale(ce, static_cast<T>(alpha[j]));
    total = total.defined() ? add(total, weighted) : weighted;
  }
  total.set_tag("loss");
  return total;
}

/// Adaptive moment estimation with bias correction and linear warmup.
struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup = 0;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;  // aligned with Parameters::named
  std::int64_t step = 0;

  static AdamState init(const Parameters<T>& params) {
    AdamState s;
    s.m.reserve(params.named.size());
    s.v.reserve(params.named.size());
    for (const auto& [name, t] : params.named) {
      s.m.emplace_back(t.numel(), T(0));
      s.v.emplace_back(t.numel(), T(0));
    }
    return s;
  }
};

template <typename T>
void adam_update(Parameters<T>& params, AdamState<T>& state, const OptimConfig& opt) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  double lr = opt.lr;
  if (opt.warmup > 0 && t < opt.warmup) lr *= t / static_cast<double>(opt.warmup);
  const T bc1 = static_cast<T>(1.0 - std::pow(opt.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(opt.beta2, t));
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T eps = static_cast<T>(opt.eps), rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.named.size(); ++i) {
    auto& tensor = params.named[i].second;
    if (!tensor.has_grad()) continue;  // parameter off the loss path this step
    const auto& g = tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    // Grad buffers are the only mutable tensor state; update in place.
    auto& w = const_cast<std::vector<T>&>(tensor.values());
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const T mhat = m[k] / bc1;
      const T vhat = v[k] / bc2;
      w[k] -= rate * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

/// Everything the trainer needs beyond the model itself.
struct TrainConfig {
  ModelConfig model;
  double lr = 1e-3;
  int warmup = 0;
  int batch_size = 8;
  std::int64_t steps = 100;
  std::uint64_t seed = 1;
  int log_every = 10;

  OptimConfig optim() const { return {lr, 0.9, 0.999, 1e-8, warmup}; }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Flat key=value serialization of a training config, canonical key order.
inline std::string train_config_to_string(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "n_future=" << cfg.model.n_future << '\n';
  if (!cfg.model.alpha.empty()) {
    os << "alpha=";
    for (std::size_t i = 0; i < cfg.model.alpha.size(); ++i)
      os << (i ? "," : "") << detail::fmt_double(cfg.model.alpha[i]);
    os << '\n';
  }
  os << "alpha_gamma=" << detail::fmt_double(cfg.model.alpha_gamma) << '\n';
  os << "layers_enc=" << cfg.model.layers_enc << '\n';
  os << "layers_dec=" << cfg.model.layers_dec << '\n';
  os << "hidden=" << cfg.model.hidden << '\n';
  os << "ffn=" << cfg.model.ffn << '\n';
  os << "heads=" << cfg.model.heads << '\n';
  os << "max_len=" << cfg.model.max_len << '\n';
  os << "vocab_size=" << cfg.model.vocab_size << '\n';
  os << "dropout=" << detail::fmt_double(cfg.model.dropout) << '\n';
  os << "lr=" << detail::fmt_double(cfg.lr) << '\n';
  os << "warmup=" << cfg.warmup << '\n';
  os << "batch_size=" << cfg.batch_size << '\n';
  os << "steps=" << cfg.steps << '\n';
  os << "seed=" << cfg.seed << '\n';
  os << "log_every=" << cfg.log_every << '\n';
  return os.str();
}

inline TrainConfig parse_train_config(std::istream& in, std::string_view what) {
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError(std::string(what) + ":" + std::to_string(lineno) +
                    ": expected key=value, got \"" + line + "\"");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "n_future")
        cfg.model.n_future = std::stoi(val);
      else if (key == "alpha") {
        cfg.model.alpha.clear();
        std::stringstream ss(val);
        std::string item;
        while (std::getline(ss, item, ',')) cfg.model.alpha.push_back(std::stod(item));
      } else if (key == "alpha_gamma")
        cfg.model.alpha_gamma = std::stod(val);
      else if (key == "layers_enc")
        cfg.model.layers_enc = std::stoi(val);
      else if (key == "layers_dec")
        cfg.model.layers_dec = std::stoi(val);
      else if (key == "hidden")
        cfg.model.hidden = std::stoi(val);
      else if (key == "ffn")
        cfg.model.ffn = std::stoi(val);
      else if (key == "heads")
        cfg.model.heads = std::stoi(val);
      else if (key == "max_len")
        cfg.model.max_len = std::stoi(val);
      else if (key == "vocab_size")
        cfg.model.vocab_size = std::stoi(val);
      else if (key == "dropout")
        cfg.model.dropout = std::stod(val);
      else if (key == "lr")
        cfg.lr = std::stod(val);
      else if (key == "warmup")
        cfg.warmup = std::stoi(val);
      else if (key == "batch_size")
        cfg.batch_size = std::stoi(val);
      else if (key == "steps")
        cfg.steps = std::stoll(val);
      else if (key == "seed")
        cfg.seed = std::stoull(val);
      else if (key == "log_every")
        cfg.log_every = std::stoi(val);
      else
        throw IoError(std::string(what) + ":" + std::to_string(lineno) + ": unknown key \"" +
                      key + "\"");
    } catch (const IoError&) {
      throw;
    } catch (const std::exception&) {
      throw IoError(std::string(what) + ":" + std::to_string(lineno) + ": bad value \"" + val +
                    "\" for key \"" + key + "\"");
    }
  }
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  return parse_train_config(in, path);
}

/// One optimization step over a batch of (encoder, target) records:
/// forward, backward, parameter update. Returns the batch loss.
template <typename T>
double train_step(const std::vector<ShardRecord>& batch, Parameters<T>& params,
                  AdamState<T>& adam, const TrainConfig& cfg, DropoutCtx* drop = nullptr) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const std::vector<double> alpha = cfg.model.alphas();
  params.zero_grads();
  Tensor<T> total;
  for (const auto& rec : batch) {
    const std::vector<std::uint8_t> enc_mask(rec.encoder_ids.size(), 1);
    const Tensor<T> h_enc = encode(params, cfg.model, rec.encoder_ids, enc_mask, drop);
    const auto logits = decode_streams(params, cfg.model, rec.decoder_ids, h_enc, enc_mask, drop);
    const Tensor<T> loss = future_ngram_loss(logits, rec.decoder_ids, alpha, kPadId);
    total = total.defined() ? add(total, loss) : loss;
  }
  Tensor<T> loss = scale(total, T(1) / static_cast<T>(batch.size()));
  loss.set_tag("loss");
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) {
    // Name the culprit: a parameter when one went bad, else the first
    // non-finite activation along the tape.
    for (const auto& [name, tensor] : params.named)
      for (const T v : tensor.values())
        if (!std::isfinite(static_cast<double>(v)))
          throw ContractError("train_step: non-finite loss; first non-finite tensor: " + name);
    const char* where = loss.first_non_finite();
    throw ContractError(std::string("train_step: non-finite loss; first non-finite tensor: ") +
                        (where ? where : "loss"));
  }
  loss.backward();
  adam_update(params, adam, cfg.optim());
  return value;
}

/// Uniformly sampled batch for one step, derived from (seed, step) alone so
/// that resumed runs draw identical data.
inline std::vector<ShardRecord> sample_batch(const std::vector<ShardRecord>& data,
                                             const TrainConfig& cfg, std::int64_t step) {
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
  std::vector<ShardRecord> batch;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                              data.size());
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) batch.push_back(data[rng() % data.size()]);
  return batch;
}

/// Runs steps [start_step, cfg.steps), logging "step<TAB>loss" lines.
template <typename T>
double train_loop(Parameters<T>& params, AdamState<T>& adam, const TrainConfig& cfg,
                  const std::vector<ShardRecord>& data, std::int64_t start_step,
                  std::ostream* log) {
  if (data.empty()) throw ContractError("train_loop: no training records");
  double loss = 0.0;
  for (std::int64_t step = start_step; step < cfg.steps; ++step) {
    const auto batch = sample_batch(data, cfg, step);
    DropoutCtx drop;
    DropoutCtx* drop_ptr = nullptr;
    if (cfg.model.dropout > 0.0) {
      drop.p = cfg.model.dropout;
      drop.rng.seed(mix_seed(cfg.seed ^ 0xd509f0b5u, static_cast<std::uint64_t>(step)));
      drop_ptr = &drop;
    }
    loss = train_step(batch, params, adam, cfg, drop_ptr);
    if (log && (cfg.log_every <= 0 || step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%lld\t%.6f\n", static_cast<long long>(step), loss);
      (*log) << buf << std::flush;
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic FNCK0001, a config block, a manifest of named blobs with
// per-blob CRC32, then raw little-endian IEEE-754 data.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "FNCK0001";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
inline constexpr std::uint8_t dtype_code() {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8, "unsupported element type");
  return sizeof(T) == 4 ? 0 : 1;
}

template <typename T>
struct Checkpoint {
  TrainConfig cfg;
  std::int64_t step = 0;
  std::string rng_state;
  Parameters<T> params;
  AdamState<T> adam;
};

namespace detail {

struct BlobRef {
  std::string name;
  std::uint8_t dtype;
  std::vector<std::size_t> shape;
  const void* data;
  std::size_t byte_len;
};

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Parameters<T>& params,
                     const AdamState<T>& adam, const TrainConfig& cfg, std::int64_t step,
                     const std::string& rng_state) {
  std::vector<detail::BlobRef> blobs;
  const auto flat_shape = [](std::size_t n) { return std::vector<std::size_t>{n}; };
  for (const auto& [name, t] : params.named)
    blobs.push_back({name, dtype_code<T>(), t.shape(), t.values().data(),
                     t.numel() * sizeof(T)});
  for (std::size_t i = 0; i < adam.m.size(); ++i)
    blobs.push_back({"adam.m." + params.named[i].first, dtype_code<T>(),
                     flat_shape(adam.m[i].size()), adam.m[i].data(),
                     adam.m[i].size() * sizeof(T)});
  for (std::size_t i = 0; i < adam.v.size(); ++i)
    blobs.push_back({"adam.v." + params.named[i].first, dtype_code<T>(),
                     flat_shape(adam.v[i].size()), adam.v[i].data(),
                     adam.v[i].size() * sizeof(T)});

  std::string out;
  out.append(kCheckpointMagic);
  write_u32(out, kCheckpointVersion);
  const std::string cfg_str = train_config_to_string(cfg);
  write_u32(out, static_cast<std::uint32_t>(cfg_str.size()));
  out.append(cfg_str);
  write_u64(out, static_cast<std::uint64_t>(step));
  write_u32(out, static_cast<std::uint32_t>(rng_state.size()));
  out.append(rng_state);

  write_u32(out, static_cast<std::uint32_t>(blobs.size()));
  std::uint64_t offset = 0;
  for (const auto& b : blobs) {
    write_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.append(b.name);
    out.push_back(static_cast<char>(b.dtype));
    write_u32(out, static_cast<std::uint32_t>(b.shape.size()));
    for (const std::size_t d : b.shape) write_u32(out, static_cast<std::uint32_t>(d));
    write_u64(out, offset);
    write_u64(out, b.byte_len);
    write_u32(out, crc32(b.data, b.byte_len));
    offset += b.byte_len;
  }
  for (const auto& b : blobs)
    out.append(static_cast<const char*>(b.data), b.byte_len);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint: write failed for " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r(data, "checkpoint " + path);
  if (r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic)
    throw IoError("checkpoint " + path + ": bad magic, expected FNCK0001");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + path + ": unsupported format version " +
                  std::to_string(version));

  Checkpoint<T> ck;
  const std::uint32_t cfg_len = r.u32("config length");
  std::istringstream cfg_in{std::string(r.bytes(cfg_len, "config block"))};
  ck.cfg = parse_train_config(cfg_in, path + " config block");
  ck.step = static_cast<std::int64_t>(r.u64("step counter"));
  const std::uint32_t rng_len = r.u32("rng length");
  ck.rng_state = std::string(r.bytes(rng_len, "rng state"));

  struct Entry {
    std::string name;
    std::uint8_t dtype;
    std::vector<std::size_t> shape;
    std::uint64_t offset, byte_len;
    std::uint32_t crc;
  };
  const std::uint32_t blob_count = r.u32("manifest");
  std::vector<Entry> manifest;
  manifest.reserve(blob_count);
  for (std::uint32_t i = 0; i < blob_count; ++i) {
    Entry e;
    const std::uint32_t name_len = r.u32("manifest");
    e.name = std::string(r.bytes(name_len, "manifest"));
    e.dtype = r.u8("manifest");
    const std::uint32_t rank = r.u32("manifest");
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u32("manifest"));
    e.offset = r.u64("manifest");
    e.byte_len = r.u64("manifest");
    e.crc = r.u32("manifest");
    manifest.push_back(std::move(e));
  }
  const std::size_t blob_base = r.pos();

  const auto blob_data = [&](const Entry& e) -> const char* {
    if (blob_base + e.offset + e.byte_len > data.size())
      throw IoError("checkpoint " + path + ": truncated blob \"" + e.name + "\"");
    const char* p = data.data() + blob_base + e.offset;
    if (crc32(p, e.byte_len) != e.crc)
      throw IoError("checkpoint " + path + ": CRC mismatch in blob \"" + e.name + "\"");
    if (e.dtype != dtype_code<T>())
      throw IoError("checkpoint " + path + ": blob \"" + e.name + "\" has dtype code " +
                    std::to_string(e.dtype) + ", expected " +
                    std::to_string(dtype_code<T>()));
    return p;
  };

  ck.params = Parameters<T>::init(ck.cfg.model, /*seed=*/0);
  ck.adam = AdamState<T>::init(ck.params);
  std::size_t used = 0;
  for (std::size_t i = 0; i < ck.params.named.size(); ++i) {
    auto& [name, tensor] = ck.params.named[i];
    const Entry* entry = nullptr;
    for (const auto& e : manifest)
      if (e.name == name) entry = &e;
    if (!entry) throw IoError("checkpoint " + path + ": missing blob \"" + name + "\"");
    if (entry->shape != tensor.shape())
      throw IoError("checkpoint " + path + ": blob \"" + name + "\" has shape " +
                    shape_str(entry->shape) + ", expected " + shape_str(tensor.shape()));
    const char* p = blob_data(*entry);
    auto& w = const_cast<std::vector<T>&>(tensor.values());
    std::memcpy(w.data(), p, entry->byte_len);
    ++used;

    for (const char* kind : {"adam.m.", "adam.v."}) {
      const std::string aname = kind + name;
      const Entry* ae = nullptr;
      for (const auto& e : manifest)
        if (e.name == aname) ae = &e;
      if (!ae) throw IoError("checkpoint " + path + ": missing blob \"" + aname + "\"");
      auto& buf = kind[5] == 'm' ? ck.adam.m[i] : ck.adam.v[i];
      if (ae->byte_len != buf.size() * sizeof(T))
        throw IoError("checkpoint " + path + ": blob \"" + aname + "\" has wrong size");
      std::memcpy(buf.data(), blob_data(*ae), ae->byte_len);
      ++used;
    }
  }
  if (used != manifest.size())
    throw IoError("checkpoint " + path + ": manifest contains " +
                  std::to_string(manifest.size() - used) + " unexpected blobs");
  ck.adam.step = ck.step;
  return ck;
}

}  // namespace fngram
