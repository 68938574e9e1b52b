#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "hgan/checkpoint.hpp"
#include "hgan/common.hpp"
#include "hgan/dataio.hpp"
#include "hgan/discriminator.hpp"
#include "hgan/generator.hpp"
#include "hgan/graph.hpp"
#include "hgan/metrics.hpp"
#include "hgan/ops.hpp"
#include "hgan/random.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

struct TrainConfig {
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t total_steps = 2000;
  std::size_t d_steps_per_g_step = 1;
  std::uint64_t seed = 0;
  bool use_sn = true;
  std::string generator_preset = "tiny";
  std::string discriminator_variant = "sngan";
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t metric_every = 0;      // 0: no metric snapshots
  std::size_t metric_images = 256;
  std::string metric_extractor = "identity";

  void validate() const {
    if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw ConfigError("train: learning rates must be > 0");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
      throw ConfigError("train: adam betas must lie in [0,1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (d_steps_per_g_step < 1) throw ConfigError("train: d_steps_per_g_step must be >= 1");
  }
};

// ---------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------

// mean(max(0, 1 - real)) + mean(max(0, 1 + fake))
template <class Real>
Tensor<Real> hinge_d_loss(Graph<Real>& g, const Tensor<Real>& real_scores,
                          const Tensor<Real>& fake_scores) {
  if (real_scores.numel() != fake_scores.numel()) {
    throw_shape("hinge_d_loss: score lengths differ, ", shape_str(real_scores.shape()), " vs ",
                shape_str(fake_scores.shape()));
  }
  auto real_term = mean_all(g, relu(g, affine(g, real_scores, Real(-1), Real(1))));
  auto fake_term = mean_all(g, relu(g, affine(g, fake_scores, Real(1), Real(1))));
  return add(g, real_term, fake_term);
}

// -mean(fake)
template <class Real>
Tensor<Real> hinge_g_loss(Graph<Real>& g, const Tensor<Real>& fake_scores) {
  return affine(g, mean_all(g, fake_scores), Real(-1), Real(0));
}

// ---------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------

template <class Real>
struct AdamMoments {
  Tensor<Real> m, v;
};

template <class Real>
std::vector<AdamMoments<Real>> init_moments(std::vector<Tensor<Real>>& params) {
  std::vector<AdamMoments<Real>> out;
  for (auto& p : params) {
    out.push_back({Tensor<Real>::zeros(p.shape()), Tensor<Real>::zeros(p.shape())});
  }
  return out;
}

// Standard Adam with bias correction; reads each parameter's grad buffer.
template <class Real>
void adam_step(std::vector<Tensor<Real>>& params, std::vector<AdamMoments<Real>>& moments,
               std::size_t step, double lr, double beta1, double beta2, double eps) {
  if (step < 1) throw ContractError("adam_step: step must be >= 1 for bias correction");
  if (params.size() != moments.size()) throw ContractError("adam_step: moment count mismatch");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    if (!p.has_grad()) continue;
    auto& m = moments[t].m;
    auto& v = moments[t].v;
    if (m.shape() != p.shape()) throw ContractError("adam_step: moment shape mismatch");
    const auto& grad = p.grad();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(grad[i]);
      const double mi = beta1 * static_cast<double>(m.data()[i]) + (1.0 - beta1) * gi;
      const double vi = beta2 * static_cast<double>(v.data()[i]) + (1.0 - beta2) * gi * gi;
      m.data()[i] = static_cast<Real>(mi);
      v.data()[i] = static_cast<Real>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p.data()[i] -= static_cast<Real>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---------------------------------------------------------------------
// Train state and step
// ---------------------------------------------------------------------

struct RunRecord {
  std::size_t step = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double grad_norm_d = 0.0;
  double grad_norm_g = 0.0;
  double wall_ms = 0.0;  // console-only; kept out of the persisted log so
                         // identical runs produce identical log bytes
  bool collapsed = false;
  bool has_metrics = false;
  double fid_proxy = 0.0;
  double is_mean = 0.0;
  double is_std = 0.0;
};

template <class Real>
struct TrainState {
  TrainConfig config;
  GeneratorParams<Real> gen;
  DiscriminatorParams<Real> disc;
  std::vector<Tensor<Real>> gen_params, disc_params;  // fixed enumeration order
  std::vector<AdamMoments<Real>> gen_moments, disc_moments;
  std::size_t step = 0;
  Rng rng;
  bool collapsed = false;
};

template <class Real>
TrainState<Real> init_train_state(const TrainConfig& config, const GeneratorSpec& gspec,
                                  const DiscriminatorSpec& dspec) {
  config.validate();
  gspec.validate();
  dspec.validate();
  if (gspec.output_resolution() != dspec.resolution ||
      gspec.out_channels != dspec.in_channels) {
    throw ConfigError("train: generator output does not match discriminator input");
  }
  TrainState<Real> st;
  st.config = config;
  st.gen = init_generator<Real>(gspec, config.seed);
  st.disc = init_discriminator<Real>(dspec, config.seed + 1);
  st.gen_params = st.gen.tensors();
  st.disc_params = st.disc.tensors();
  st.gen_moments = init_moments(st.gen_params);
  st.disc_moments = init_moments(st.disc_params);
  st.rng = Rng(config.seed + 2);
  return st;
}

namespace detail {

template <class Real>
double grad_norm(const std::vector<Tensor<Real>>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (Real v : p.grad()) acc += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(acc);
}

template <class Real>
void zero_grads(std::vector<Tensor<Real>>& params) {
  for (auto& p : params) p.zero_grad();
}

template <class Real>
Tensor<Real> sample_latents(Rng& rng, std::size_t n, std::size_t latent_dim) {
  Tensor<Real> z = Tensor<Real>::zeros({n, latent_dim});
  for (Real& v : z.values()) v = static_cast<Real>(rng.normal());
  return z;
}

}  // namespace detail

// One full adversarial step: d_steps_per_g_step discriminator updates on
// (real batch, freshly generated fakes), then one generator update on fresh
// latents. Any non-finite loss or numeric overflow marks the run collapsed
// and freezes the state; a collapsed state never mutates again.
template <class Real>
RunRecord train_step(TrainState<Real>& state, const Tensor<Real>& real_batch) {
  const TrainConfig& cfg = state.config;
  RunRecord rec;
  rec.step = state.step + 1;
  if (state.collapsed) {
    rec.collapsed = true;
    rec.step = state.step;
    return rec;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = real_batch.dim(0);
  try {
    for (std::size_t dstep = 0; dstep < cfg.d_steps_per_g_step; ++dstep) {
      auto latents = detail::sample_latents<Real>(state.rng, n, state.gen.spec.latent_dim);
      Tensor<Real> fakes;
      {
        Graph<Real> gg(false);
        fakes = generate(gg, state.gen, latents).detach();
      }
      Graph<Real> gd;
      // one forward over [real; fake] keeps the power iteration at exactly
      // one advance per discriminator update
      auto both = concat0_data(real_batch.detach(), fakes);
      auto scores = discriminate(gd, state.disc, both, /*train_mode=*/true);
      auto real_scores = slice0(gd, scores, 0, n);
      auto fake_scores = slice0(gd, scores, n, 2 * n);
      auto loss = hinge_d_loss(gd, real_scores, fake_scores);
      rec.loss_d = static_cast<double>(loss.item());
      if (!std::isfinite(rec.loss_d)) throw NumericError("train: non-finite d loss");
      gd.backward(loss);
      rec.grad_norm_d = detail::grad_norm(state.disc_params);
      adam_step(state.disc_params, state.disc_moments, state.step + 1, cfg.lr_d, cfg.adam_beta1,
                cfg.adam_beta2, cfg.adam_eps);
      detail::zero_grads(state.disc_params);
    }

    auto latents = detail::sample_latents<Real>(state.rng, n, state.gen.spec.latent_dim);
    Graph<Real> gg;
    auto fakes = generate(gg, state.gen, latents);
    auto fake_scores = discriminate(gg, state.disc, fakes, /*train_mode=*/false);
    auto loss = hinge_g_loss(gg, fake_scores);
    rec.loss_g = static_cast<double>(loss.item());
    if (!std::isfinite(rec.loss_g)) throw NumericError("train: non-finite g loss");
    gg.backward(loss);
    rec.grad_norm_g = detail::grad_norm(state.gen_params);
    adam_step(state.gen_params, state.gen_moments, state.step + 1, cfg.lr_g, cfg.adam_beta1,
              cfg.adam_beta2, cfg.adam_eps);
    detail::zero_grads(state.gen_params);
    detail::zero_grads(state.disc_params);  // g backward also reached d params
  } catch (const NumericError&) {
    state.collapsed = true;
    rec.collapsed = true;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    return rec;
  }
  state.step += 1;
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// Deterministic shuffled batch order over an in-memory dataset.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, Rng rng)
      : n_(n), batch_(batch), rng_(rng), cursor_(0) {
    if (batch_ > n_) throw ConfigError("batch size exceeds dataset size");
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > n_) reshuffle();
    std::vector<std::size_t> idx(order_.begin() + cursor_, order_.begin() + cursor_ + batch_);
    cursor_ += batch_;
    return idx;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    rng_.shuffle(order_);
    cursor_ = 0;
  }
  std::size_t n_, batch_;
  Rng rng_;
  std::size_t cursor_;
  std::vector<std::size_t> order_;
};

// Fresh latents from a dedicated stream so evaluation never perturbs the
// training stream.
template <class Real>
Tensor<Real> sample_images(TrainState<Real>& state, std::size_t n, std::uint64_t eval_seed) {
  Rng rng(eval_seed);
  Graph<Real> g(false);
  auto latents = detail::sample_latents<Real>(rng, n, state.gen.spec.latent_dim);
  return generate(g, state.gen, latents);
}

// ---------------------------------------------------------------------
// Checkpoint plumbing
// ---------------------------------------------------------------------

template <class Real>
Checkpoint checkpoint_from_state(TrainState<Real>& state, const std::string& config_echo) {
  Checkpoint ck;
  ck.step = state.step;
  ck.config_echo = config_echo;
  ck.rng_state = state.rng.serialize();
  auto push = [&](const std::string& name, Tensor<Real>& t) {
    ck.tensors.emplace_back(name, t.template cast<float>().set_requires_grad(false));
  };
  state.gen.for_each(push);
  state.disc.for_each(push, /*include_sn_states=*/true);
  std::size_t gi = 0;
  state.gen.for_each([&](const std::string& name, Tensor<Real>&) {
    push("opt." + name + ".m", state.gen_moments[gi].m);
    push("opt." + name + ".v", state.gen_moments[gi].v);
    ++gi;
  });
  std::size_t di = 0;
  state.disc.for_each([&](const std::string& name, Tensor<Real>&) {
    push("opt." + name + ".m", state.disc_moments[di].m);
    push("opt." + name + ".v", state.disc_moments[di].v);
    ++di;
  });
  return ck;
}

template <class Real>
void restore_state(TrainState<Real>& state, const Checkpoint& ck) {
  auto pull = [&](const std::string& name, Tensor<Real>& t) {
    const TensorF* src = ck.find(name);
    if (src == nullptr) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (src->shape() != t.shape()) {
      throw FormatError("checkpoint: shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < t.numel(); ++i) {
      t.data()[i] = static_cast<Real>(src->data()[i]);
    }
  };
  state.gen.for_each(pull);
  state.disc.for_each(pull, /*include_sn_states=*/true);
  std::size_t gi = 0;
  state.gen.for_each([&](const std::string& name, Tensor<Real>&) {
    pull("opt." + name + ".m", state.gen_moments[gi].m);
    pull("opt." + name + ".v", state.gen_moments[gi].v);
    ++gi;
  });
  std::size_t di = 0;
  state.disc.for_each([&](const std::string& name, Tensor<Real>&) {
    pull("opt." + name + ".m", state.disc_moments[di].m);
    pull("opt." + name + ".v", state.disc_moments[di].v);
    ++di;
  });
  state.step = ck.step;
  state.rng.deserialize(ck.rng_state);
}

// ---------------------------------------------------------------------
// Structured run log
// ---------------------------------------------------------------------

// One JSON object per line with a fixed field order and fixed float
// formatting, so identical runs write identical bytes.
inline std::string format_run_record(const RunRecord& rec) {
  char buf[512];
  int len = std::snprintf(buf, sizeof(buf),
                          "{\"step\":%zu,\"loss_d\":%.9g,\"loss_g\":%.9g,"
                          "\"grad_norm_d\":%.9g,\"grad_norm_g\":%.9g,\"collapsed\":%s",
                          rec.step, rec.loss_d, rec.loss_g, rec.grad_norm_d, rec.grad_norm_g,
                          rec.collapsed ? "true" : "false");
  std::string line(buf, static_cast<std::size_t>(len));
  if (rec.has_metrics) {
    len = std::snprintf(buf, sizeof(buf), ",\"fid_proxy\":%.9g,\"is_mean\":%.9g,\"is_std\":%.9g",
                        rec.fid_proxy, rec.is_mean, rec.is_std);
    line.append(buf, static_cast<std::size_t>(len));
  }
  line += "}\n";
  return line;
}

// ---------------------------------------------------------------------
// Full run loop and the discriminator-swap benchmark
// ---------------------------------------------------------------------

template <class Real>
double fid_proxy_snapshot(TrainState<Real>& state, const ImageBatch& data,
                          const FeatureExtractor& extractor) {
  const std::size_t n = std::min(state.config.metric_images, data.size());
  const ImageBatch real = data.head(n);
  Tensor<Real> fakes = sample_images(state, n, derive_seed(state.config.seed, 0xE7A1));
  return fid(real.images, fakes.template cast<float>(), extractor);
}

struct TrainRunResult {
  std::vector<RunRecord> records;
  bool collapsed = false;
};

// Runs total_steps adversarial steps over the dataset, invoking on_record
// after every step (metric snapshots attached every metric_every steps).
// Stops early if the run collapses.
template <class Real>
TrainRunResult train_loop(TrainState<Real>& state, const ImageBatch& data,
                          const std::function<void(const RunRecord&)>& on_record) {
  const TrainConfig& cfg = state.config;
  if (data.size() == 0) throw ContractError("train_loop: empty dataset");
  if (data.resolution() != state.gen.spec.output_resolution()) {
    throw_shape("train_loop: dataset resolution ", data.resolution(),
                " does not match generator output ", state.gen.spec.output_resolution());
  }
  std::unique_ptr<FeatureExtractor> extractor;
  if (cfg.metric_every > 0) extractor = make_extractor(cfg.metric_extractor);

  BatchSampler sampler(data.size(), cfg.batch_size, Rng(derive_seed(cfg.seed, 0xBA7C)));
  TrainRunResult result;
  for (std::size_t s = 0; s < cfg.total_steps; ++s) {
    const ImageBatch batch = data.subset(sampler.next());
    RunRecord rec = train_step(state, batch.images.template cast<Real>());
    if (!rec.collapsed && extractor &&
        (rec.step % cfg.metric_every == 0 || rec.step == cfg.total_steps)) {
      rec.has_metrics = true;
      rec.fid_proxy = fid_proxy_snapshot(state, data, *extractor);
      const InceptionScore is =
          inception_score(sample_images(state, std::min<std::size_t>(cfg.metric_images, 100),
                                        derive_seed(cfg.seed, 0x15EED))
                              .template cast<float>(),
                          make_proxy_classifier(), 4);
      rec.is_mean = is.mean;
      rec.is_std = is.stddev;
    }
    if (on_record) on_record(rec);
    result.records.push_back(rec);
    if (rec.collapsed) {
      result.collapsed = true;
      break;
    }
  }
  return result;
}

struct BenchmarkRow {
  std::string discriminator;
  std::size_t params = 0;
  double fid_proxy = 0.0;
  bool collapsed = false;
};

// Fixed generator, swapped discriminators; one row per variant. A collapsed
// variant is flagged and the sweep continues.
template <class Real>
std::vector<BenchmarkRow> run_benchmark(const std::vector<std::string>& variants,
                                        const TrainConfig& config, const GeneratorSpec& gspec,
                                        std::size_t sngan_width, std::size_t dcgan_width,
                                        const ImageBatch& data) {
  if (variants.empty()) throw ContractError("run_benchmark: need at least one variant");
  config.validate();
  std::vector<BenchmarkRow> rows;
  const auto extractor = make_extractor(config.metric_extractor);
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const std::string& name = variants[i];
    const std::size_t width = (name == "dcgan") ? dcgan_width : sngan_width;
    DiscriminatorSpec dspec = discriminator_preset(name, gspec.output_resolution(), width);
    TrainConfig cfg = config;
    cfg.seed = derive_seed(config.seed, i);
    cfg.use_sn = dspec.use_sn;

    BenchmarkRow row;
    row.discriminator = name;
    row.params = discriminator_param_count(dspec);
    TrainState<Real> state = init_train_state<Real>(cfg, gspec, dspec);
    TrainRunResult run = train_loop<Real>(state, data, nullptr);
    row.collapsed = run.collapsed;
    row.fid_proxy = run.collapsed
                        ? std::numeric_limits<double>::quiet_NaN()
                        : fid_proxy_snapshot(state, data, *extractor);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_benchmark_csv(const std::string& path, const std::vector<BenchmarkRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("benchmark: cannot open '" + path + "' for writing");
  out << "discriminator,params,fid_proxy,collapsed\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.9g,%s\n", r.discriminator.c_str(), r.params,
                  r.fid_proxy, r.collapsed ? "true" : "false");
    out << buf;
  }
  if (!out) throw IoError("benchmark: write failed on '" + path + "'");
}

}  // namespace hgan
