#include "pcdiff/networks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pcdiff {

using grad::Tape;
using grad::Tensor;
using grad::Var;

void ModelConfig::validate() const {
  if (latent_dim == 0) throw std::invalid_argument("latent_dim must be positive");
  if (time_dim < 2 || time_dim % 2 != 0) throw std::invalid_argument("time_dim must be even and >= 2");
  if (encoder_widths.empty()) throw std::invalid_argument("encoder needs at least one layer");
  if (num_classes == 0) throw std::invalid_argument("num_classes must be positive");
  for (auto w : encoder_widths) {
    if (w == 0) throw std::invalid_argument("encoder width 0");
  }
  for (auto w : decoder_widths) {
    if (w == 0) throw std::invalid_argument("decoder width 0");
  }
}

namespace {

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l{Tensor(in, out), Tensor(1, out)};
  for (double& w : l.weight.data()) w = bound * (2.0 * rng.uniform() - 1.0);
  for (double& b : l.bias.data()) b = bound * (2.0 * rng.uniform() - 1.0);
  return l;
}

}  // namespace

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  Rng rng(seed, {0x1417});
  std::size_t in = kStateChannels;
  for (auto w : config.encoder_widths) {
    m.encoder.point_layers.push_back(make_linear(in, w, rng));
    in = w;
  }
  m.encoder.mu_head = make_linear(in, config.latent_dim, rng);
  m.encoder.logvar_head = make_linear(in, config.latent_dim, rng);

  in = kStateChannels + config.time_dim + config.latent_dim;
  for (auto w : config.decoder_widths) {
    m.decoder.layers.push_back(make_linear(in, w, rng));
    in = w;
  }
  m.decoder.layers.push_back(make_linear(in, kStateChannels, rng));
  return m;
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  auto push = [&out](Linear& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  };
  for (auto& l : encoder.point_layers) push(l);
  push(encoder.mu_head);
  push(encoder.logvar_head);
  for (auto& l : decoder.layers) push(l);
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

// ---------------------------------------------------------------------------

ModelVars bind(Tape& tape, const Model& model, bool requires_grad) {
  ModelVars v;
  auto leaf = [&](const Linear& l) {
    LinearVars lv{tape.leaf(l.weight, requires_grad), tape.leaf(l.bias, requires_grad)};
    v.all.push_back(lv.weight);
    v.all.push_back(lv.bias);
    return lv;
  };
  for (const auto& l : model.encoder.point_layers) v.encoder_layers.push_back(leaf(l));
  v.mu_head = leaf(model.encoder.mu_head);
  v.logvar_head = leaf(model.encoder.logvar_head);
  for (const auto& l : model.decoder.layers) v.decoder_layers.push_back(leaf(l));
  return v;
}

namespace {

Var affine(const LinearVars& l, Var x) { return grad::add(grad::matmul(x, l.weight), l.bias); }

Var tile_rows(Var row, std::size_t n) {
  Tape& tape = *row.tape;
  return grad::matmul(tape.constant(Tensor(n, 1, 1.0)), row);
}

}  // namespace

LatentVars encode(const ModelVars& params, Var state) {
  Var h = state;
  for (const auto& l : params.encoder_layers) h = grad::leaky_relu(affine(l, h));
  Var pooled = grad::max_reduce(h);
  return {affine(params.mu_head, pooled), affine(params.logvar_head, pooled)};
}

Var reparameterize(const LatentVars& latent, const Tensor& eps) {
  Tape& tape = *latent.mu.tape;
  Var sigma = grad::exp(grad::scale(latent.logvar, 0.5));
  return grad::add(latent.mu, grad::mul(sigma, tape.constant(eps)));
}

Var kl_to_prior(const LatentVars& latent) {
  Tape& tape = *latent.mu.tape;
  const Tensor& lv = tape.value(latent.logvar);
  Var ones = tape.constant(Tensor(lv.rows(), lv.cols(), 1.0));
  Var inner = grad::add(grad::exp(latent.logvar), grad::square(latent.mu));
  inner = grad::sub(inner, ones);
  inner = grad::sub(inner, latent.logvar);
  return grad::scale(grad::sum(inner), 0.5);
}

Var decode(const ModelVars& params, Var state, const Tensor& time_embedding, Var z) {
  Tape& tape = *state.tape;
  const std::size_t n = tape.value(state).rows();
  Var cond = grad::concat({tape.constant(time_embedding), z});
  Var h = grad::concat({state, tile_rows(cond, n)});
  const std::size_t last = params.decoder_layers.size() - 1;
  for (std::size_t i = 0; i < last; ++i) h = grad::leaky_relu(affine(params.decoder_layers[i], h));
  return affine(params.decoder_layers[last], h);
}

// ---------------------------------------------------------------------------

Tensor sample_eps(std::size_t dim, Rng& rng) {
  Tensor eps(1, dim);
  for (double& e : eps.data()) e = std::clamp(rng.normal(), -kEpsClamp, kEpsClamp);
  return eps;
}

LatentCode encode(const Model& model, const Tensor& state, Rng* rng) {
  Tape tape;
  ModelVars params = bind(tape, model, false);
  LatentVars lat = encode(params, tape.constant(state));
  LatentCode out{tape.value(lat.mu), tape.value(lat.logvar), tape.value(lat.mu)};
  if (rng != nullptr) {
    out.z = tape.value(reparameterize(lat, sample_eps(model.config.latent_dim, *rng)));
  }
  return out;
}

Tensor decode(const Model& model, const Tensor& state, std::size_t t, const VarianceSchedule& schedule,
              const Tensor& z) {
  Tape tape;
  ModelVars params = bind(tape, model, false);
  const Tensor emb = time_embedding(t, schedule, model.config.time_dim, model.config.beta_only);
  return tape.value(decode(params, tape.constant(state), emb, tape.constant(z)));
}

double kl_to_prior(const LatentCode& latent) {
  double s = 0.0;
  for (std::size_t i = 0; i < latent.mu.size(); ++i) {
    const double m = latent.mu[i], lv = latent.logvar[i];
    s += std::exp(lv) + m * m - 1.0 - lv;
  }
  return 0.5 * s;
}

Tensor time_embedding(std::size_t t, const VarianceSchedule& schedule, std::size_t dim, bool beta_only) {
  if (t < 1 || t > schedule.steps()) {
    throw std::out_of_range("time_embedding: t=" + std::to_string(t) + " outside 1.." +
                            std::to_string(schedule.steps()));
  }
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time embedding dimension must be even and >= 2");
  Tensor e(1, dim);
  e[0] = schedule.beta(t);
  if (beta_only) return e;
  e[1] = static_cast<double>(t) / static_cast<double>(schedule.steps());
  const std::size_t freqs = dim / 2 - 1;
  for (std::size_t k = 0; k < freqs; ++k) {
    const double omega = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(freqs, 1)));
    e[2 + 2 * k] = std::sin(omega * static_cast<double>(t));
    e[3 + 2 * k] = std::cos(omega * static_cast<double>(t));
  }
  return e;
}

}  // namespace pcdiff
