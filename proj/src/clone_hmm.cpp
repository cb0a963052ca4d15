#include "clonemap/clone_hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "clonemap/errors.hpp"
#include "clonemap/random.hpp"

namespace clonemap {

namespace {

constexpr double kResetMass = 1e-12;

void check_data(const CloneHmm& model, const TrajectoryData& data) {
  data.validate();
  for (ObsId o : data.observations) {
    if (index(o) >= model.n_obs()) {
      throw InvalidArgument("observation " + std::to_string(index(o)) +
                            " outside alphabet of size " + std::to_string(model.n_obs()));
    }
  }
  for (std::size_t t = 0; t < data.actions.size(); ++t) {
    if (index(data.actions[t]) >= model.n_actions()) {
      // Placeholders before an episode boundary are never read.
      const auto& b = data.episode_boundaries;
      if (std::binary_search(b.begin(), b.end(), t + 1)) continue;
      throw InvalidArgument("action " + std::to_string(index(data.actions[t])) +
                            " outside action set of size " + std::to_string(model.n_actions()));
    }
  }
}

/// Rescaled forward/backward messages for one episode. Messages are stored
/// only over the clone block of the observation at each step.
struct Messages {
  std::vector<std::size_t> offset;  // into alpha/beta per step
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> scale;  // c_t, scale[0] == 1
  double log_lik = 0.0;
  bool possible = true;
};

Messages forward(const CloneHmm& m, const TrajectoryData& d, std::size_t begin, std::size_t end) {
  Messages msg;
  const std::size_t len = end - begin;
  msg.offset.resize(len + 1);
  msg.offset[0] = 0;
  for (std::size_t t = 0; t < len; ++t) {
    const auto [lo, hi] = m.clone_range(d.observations[begin + t]);
    msg.offset[t + 1] = msg.offset[t] + (hi - lo);
  }
  msg.alpha.assign(msg.offset[len], 0.0);
  msg.scale.assign(len, 1.0);

  {
    const auto [lo, hi] = m.clone_range(d.observations[begin]);
    std::size_t n_active = 0;
    for (std::size_t s = lo; s < hi; ++s) n_active += m.active(s);
    if (n_active == 0) {
      msg.possible = false;
      msg.log_lik = -std::numeric_limits<double>::infinity();
      return msg;
    }
    for (std::size_t s = lo; s < hi; ++s) {
      msg.alpha[s - lo] = m.active(s) ? 1.0 / static_cast<double>(n_active) : 0.0;
    }
  }

  for (std::size_t t = 1; t < len; ++t) {
    const std::size_t a = index(d.actions[begin + t - 1]);
    const auto [plo, phi] = m.clone_range(d.observations[begin + t - 1]);
    const auto [lo, hi] = m.clone_range(d.observations[begin + t]);
    const double* prev = msg.alpha.data() + msg.offset[t - 1];
    double* cur = msg.alpha.data() + msg.offset[t];
    for (std::size_t i = plo; i < phi; ++i) {
      const double p = prev[i - plo];
      if (p == 0.0) continue;
      const auto r = m.row(a, i);
      for (std::size_t j = lo; j < hi; ++j) cur[j - lo] += p * r[j];
    }
    double c = 0.0;
    for (std::size_t k = 0; k < hi - lo; ++k) c += cur[k];
    if (!(c > 0.0)) {
      msg.possible = false;
      msg.log_lik = -std::numeric_limits<double>::infinity();
      return msg;
    }
    for (std::size_t k = 0; k < hi - lo; ++k) cur[k] /= c;
    msg.scale[t] = c;
    msg.log_lik += std::log(c);
  }
  return msg;
}

void backward(const CloneHmm& m, const TrajectoryData& d, std::size_t begin, std::size_t end,
              Messages& msg) {
  const std::size_t len = end - begin;
  msg.beta.assign(msg.offset[len], 0.0);
  {
    const std::size_t n = msg.offset[len] - msg.offset[len - 1];
    std::fill_n(msg.beta.begin() + static_cast<std::ptrdiff_t>(msg.offset[len - 1]), n, 1.0);
  }
  for (std::size_t t = len - 1; t-- > 0;) {
    const std::size_t a = index(d.actions[begin + t]);
    const auto [lo, hi] = m.clone_range(d.observations[begin + t]);
    const auto [nlo, nhi] = m.clone_range(d.observations[begin + t + 1]);
    const double* next = msg.beta.data() + msg.offset[t + 1];
    double* cur = msg.beta.data() + msg.offset[t];
    const double inv_c = 1.0 / msg.scale[t + 1];
    for (std::size_t i = lo; i < hi; ++i) {
      const auto r = m.row(a, i);
      double acc = 0.0;
      for (std::size_t j = nlo; j < nhi; ++j) acc += r[j] * next[j - nlo];
      cur[i - lo] = acc * inv_c;
    }
  }
}

}  // namespace

// --- TrajectoryData / Belief -------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> TrajectoryData::episodes() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t b : episode_boundaries) {
    if (b == 0) continue;
    out.emplace_back(begin, b);
    begin = b;
  }
  if (begin < observations.size()) out.emplace_back(begin, observations.size());
  return out;
}

void TrajectoryData::validate() const {
  if (observations.empty()) throw InvalidArgument("trajectory has no observations");
  if (actions.size() + 1 != observations.size()) {
    throw InvalidArgument("trajectory needs exactly one action between consecutive observations");
  }
  for (std::size_t k = 0; k < episode_boundaries.size(); ++k) {
    const std::size_t b = episode_boundaries[k];
    if (b >= observations.size()) throw InvalidArgument("episode boundary out of range");
    if (k > 0 && b <= episode_boundaries[k - 1]) {
      throw InvalidArgument("episode boundaries must be strictly increasing");
    }
  }
}

void Belief::validate(double tol) const {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw InvalidArgument("belief has a negative or NaN entry");
    total += p;
  }
  if (std::abs(total - 1.0) > tol) {
    throw InvalidArgument("belief sums to " + std::to_string(total));
  }
}

double Belief::entropy() const {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

// --- CloneHmm ----------------------------------------------------------------

CloneHmm::CloneHmm(std::vector<std::uint32_t> clones_per_obs, std::size_t n_actions)
    : n_actions_(n_actions), clones_per_obs_(std::move(clones_per_obs)) {
  if (clones_per_obs_.empty()) throw InvalidArgument("model needs at least one observation");
  if (n_actions_ == 0) throw InvalidArgument("model needs at least one action");
  block_start_.resize(clones_per_obs_.size() + 1, 0);
  for (std::size_t o = 0; o < clones_per_obs_.size(); ++o) {
    if (clones_per_obs_[o] == 0) {
      throw InvalidArgument("observation " + std::to_string(o) + " has zero clones");
    }
    block_start_[o + 1] = block_start_[o] + clones_per_obs_[o];
    for (std::uint32_t k = 0; k < clones_per_obs_[o]; ++k) state_to_obs_.push_back(obs_id(o));
  }
  const std::size_t s = state_to_obs_.size();
  trans_.assign(n_actions_ * s * s, 0.0);
  active_.assign(s, 1);
}

std::pair<std::size_t, std::size_t> CloneHmm::clone_range(ObsId obs) const {
  const std::size_t o = index(obs);
  if (o >= n_obs()) throw InvalidArgument("observation " + std::to_string(o) + " out of range");
  return {block_start_[o], block_start_[o + 1]};
}

std::size_t CloneHmm::n_active() const {
  return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), std::uint8_t{1}));
}

double CloneHmm::source_mass(std::size_t from) const {
  double total = 0.0;
  for (std::size_t a = 0; a < n_actions_; ++a) total += action_mass(a, from);
  return total;
}

double CloneHmm::action_mass(std::size_t action, std::size_t from) const {
  const auto r = row(action, from);
  return std::accumulate(r.begin(), r.end(), 0.0);
}

void CloneHmm::normalize_rows() {
  const std::size_t s = n_states();
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t a = 0; a < n_actions_; ++a) {
      auto r = row(a, i);
      if (!active(i)) {
        std::fill(r.begin(), r.end(), 0.0);
        continue;
      }
      for (std::size_t j = 0; j < s; ++j) {
        if (!active(j)) r[j] = 0.0;
      }
    }
    if (!active(i)) continue;
    const double total = source_mass(i);
    if (total <= 0.0) continue;
    for (std::size_t a = 0; a < n_actions_; ++a) {
      for (double& p : row(a, i)) p /= total;
    }
  }
}

void CloneHmm::validate(double tol) const {
  const std::size_t s = n_states();
  if (trans_.size() != n_actions_ * s * s || active_.size() != s) {
    throw ValidationError("tensor shape does not match state count");
  }
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t a = 0; a < n_actions_; ++a) {
      for (double p : row(a, i)) {
        if (!(p >= 0.0 && p <= 1.0)) {
          throw ValidationError("row " + std::to_string(i) + " has a probability outside [0, 1]");
        }
      }
    }
    const double total = source_mass(i);
    if (active(i)) {
      if (std::abs(total - 1.0) > tol) {
        throw ValidationError("row " + std::to_string(i) + " sums to " + std::to_string(total) +
                              " over (action, next state)");
      }
    } else if (total != 0.0) {
      throw ValidationError("row " + std::to_string(i) + " is inactive but has outgoing mass");
    }
  }
}

// --- construction -----------------------------------------------------------

CloneHmm new_cscg(std::size_t n_obs, std::uint32_t clones_per_obs, std::size_t n_actions,
                  std::uint64_t seed) {
  if (n_obs == 0) throw InvalidArgument("n_obs must be at least 1");
  if (clones_per_obs == 0) throw InvalidArgument("clone count must be at least 1");
  return new_cscg(std::vector<std::uint32_t>(n_obs, clones_per_obs), n_actions, seed);
}

CloneHmm new_cscg(std::vector<std::uint32_t> clones_per_obs, std::size_t n_actions,
                  std::uint64_t seed) {
  CloneHmm model(std::move(clones_per_obs), n_actions);
  Rng rng(seed);
  const std::size_t s = model.n_states();
  for (std::size_t a = 0; a < n_actions; ++a) {
    for (std::size_t i = 0; i < s; ++i) {
      for (double& p : model.row(a, i)) p = rng.uniform() + 1e-3;
    }
  }
  model.normalize_rows();
  return model;
}

// --- inference --------------------------------------------------------------

double log_likelihood(const CloneHmm& model, const TrajectoryData& data) {
  check_data(model, data);
  double total = 0.0;
  for (const auto& [b, e] : data.episodes()) {
    const Messages msg = forward(model, data, b, e);
    if (!msg.possible) return -std::numeric_limits<double>::infinity();
    total += msg.log_lik;
  }
  return total;
}

EmResult train_em(const CloneHmm& init, const TrajectoryData& data, const EmOptions& opts) {
  if (data.empty()) throw InvalidArgument("training data is empty");
  if (opts.max_iters == 0) throw InvalidArgument("max_iters must be at least 1");
  if (!(opts.pseudocount >= 0.0)) throw InvalidArgument("pseudocount must be non-negative");
  check_data(init, data);

  EmResult result{init, {}, false};
  CloneHmm& model = result.model;
  const std::size_t s = model.n_states();
  const std::size_t n_act = model.n_actions();
  std::vector<double> counts(n_act * s * s);
  const auto episodes = data.episodes();

  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    std::fill(counts.begin(), counts.end(), 0.0);
    double ll = 0.0;
    for (const auto& [b, e] : episodes) {
      Messages msg = forward(model, data, b, e);
      if (!msg.possible) {
        throw InvalidArgument("training data has zero probability under the model");
      }
      ll += msg.log_lik;
      backward(model, data, b, e, msg);
      for (std::size_t t = 0; t + 1 < e - b; ++t) {
        const std::size_t a = index(data.actions[b + t]);
        const auto [lo, hi] = model.clone_range(data.observations[b + t]);
        const auto [nlo, nhi] = model.clone_range(data.observations[b + t + 1]);
        const double* alpha = msg.alpha.data() + msg.offset[t];
        const double* beta = msg.beta.data() + msg.offset[t + 1];
        const double inv_c = 1.0 / msg.scale[t + 1];
        for (std::size_t i = lo; i < hi; ++i) {
          const double w = alpha[i - lo] * inv_c;
          if (w == 0.0) continue;
          const auto r = model.row(a, i);
          double* c = counts.data() + (a * s + i) * s;
          for (std::size_t j = nlo; j < nhi; ++j) c[j] += w * r[j] * beta[j - nlo];
        }
      }
    }
    const double prev = result.trace.empty() ? 0.0 : result.trace.back();
    result.trace.push_back(ll);

    // M-step: joint renormalization per source state.
    for (std::size_t i = 0; i < s; ++i) {
      if (!model.active(i)) continue;
      double total = 0.0;
      for (std::size_t a = 0; a < n_act; ++a) {
        double* c = counts.data() + (a * s + i) * s;
        for (std::size_t j = 0; j < s; ++j) {
          if (model.active(j)) {
            c[j] += opts.pseudocount;
            total += c[j];
          } else {
            c[j] = 0.0;
          }
        }
      }
      if (total <= 0.0) continue;  // never visited: keep the current row
      for (std::size_t a = 0; a < n_act; ++a) {
        const double* c = counts.data() + (a * s + i) * s;
        auto r = model.row(a, i);
        for (std::size_t j = 0; j < s; ++j) r[j] = c[j] / total;
      }
    }

    if (result.trace.size() > 1) {
      const double gain = ll - prev;
      if (gain <= opts.tol * std::max(std::abs(prev), 1e-300)) {
        result.converged = true;
        break;
      }
    }
  }
  return result;
}

std::vector<std::size_t> viterbi_decode(const CloneHmm& model, const TrajectoryData& data) {
  check_data(model, data);
  std::vector<std::size_t> path(data.size());
  std::vector<double> delta, next;
  std::vector<std::size_t> back;  // flat, per step over the clone block
  std::vector<std::size_t> offset;

  for (const auto& [b, e] : data.episodes()) {
    const std::size_t len = e - b;
    offset.assign(len + 1, 0);
    for (std::size_t t = 0; t < len; ++t) {
      const auto [lo, hi] = model.clone_range(data.observations[b + t]);
      offset[t + 1] = offset[t] + (hi - lo);
    }
    back.assign(offset[len], 0);

    auto [lo, hi] = model.clone_range(data.observations[b]);
    delta.assign(hi - lo, 0.0);
    bool any = false;
    for (std::size_t i = lo; i < hi; ++i) {
      if (model.active(i)) {
        delta[i - lo] = 1.0;
        any = true;
      }
    }
    if (!any) throw DecodeFailure("first observation of episode has no active clone");

    for (std::size_t t = 1; t < len; ++t) {
      const std::size_t a = index(data.actions[b + t - 1]);
      const auto [nlo, nhi] = model.clone_range(data.observations[b + t]);
      next.assign(nhi - nlo, 0.0);
      double best_all = 0.0;
      for (std::size_t j = nlo; j < nhi; ++j) {
        double best = 0.0;
        std::size_t arg = lo;
        for (std::size_t i = lo; i < hi; ++i) {
          const double v = delta[i - lo] * model.trans(a, i, j);
          if (v > best) {
            best = v;
            arg = i;
          }
        }
        next[j - nlo] = best;
        back[offset[t] + (j - nlo)] = arg;
        best_all = std::max(best_all, best);
      }
      if (!(best_all > 0.0)) {
        throw DecodeFailure("no state path explains step " + std::to_string(b + t));
      }
      for (double& v : next) v /= best_all;
      delta.swap(next);
      lo = nlo;
      hi = nhi;
    }

    std::size_t state = lo;
    double best = -1.0;
    for (std::size_t j = lo; j < hi; ++j) {
      if (delta[j - lo] > best) {
        best = delta[j - lo];
        state = j;
      }
    }
    path[e - 1] = state;
    for (std::size_t t = len - 1; t > 0; --t) {
      const auto [clo, chi] = model.clone_range(data.observations[b + t]);
      (void)chi;
      state = back[offset[t] + (state - clo)];
      path[b + t - 1] = state;
    }
  }
  return path;
}

CloneHmm refine_viterbi(const CloneHmm& model, const TrajectoryData& data, bool reestimate) {
  const auto path = viterbi_decode(model, data);
  CloneHmm out = model;
  const std::size_t s = model.n_states();
  const std::size_t n_act = model.n_actions();
  for (std::size_t i = 0; i < s; ++i) out.set_active(i, false);
  for (std::size_t st : path) out.set_active(st, true);

  if (!reestimate) {
    out.normalize_rows();
    // A surviving state whose trained mass all pointed at dropped states
    // keeps nowhere to go; treat it as absorbing.
    for (std::size_t i = 0; i < s; ++i) {
      if (out.active(i) && out.source_mass(i) <= 0.0) {
        for (std::size_t a = 0; a < n_act; ++a) out.trans(a, i, i) = 1.0 / static_cast<double>(n_act);
      }
    }
    return out;
  }

  std::vector<double> counts(n_act * s * s, 0.0);
  for (const auto& [b, e] : data.episodes()) {
    for (std::size_t t = b; t + 1 < e; ++t) {
      const std::size_t a = index(data.actions[t]);
      counts[(a * s + path[t]) * s + path[t + 1]] += 1.0;
    }
  }
  for (std::size_t i = 0; i < s; ++i) {
    double total = 0.0;
    for (std::size_t a = 0; a < n_act; ++a) {
      for (std::size_t j = 0; j < s; ++j) total += counts[(a * s + i) * s + j];
    }
    for (std::size_t a = 0; a < n_act; ++a) {
      auto r = out.row(a, i);
      for (std::size_t j = 0; j < s; ++j) {
        r[j] = total > 0.0 ? counts[(a * s + i) * s + j] / total : 0.0;
      }
    }
    if (out.active(i) && total == 0.0) {
      for (std::size_t a = 0; a < n_act; ++a) out.trans(a, i, i) = 1.0 / static_cast<double>(n_act);
    }
  }
  return out;
}

Belief initial_belief(const CloneHmm& model, ObsId obs) {
  const auto [lo, hi] = model.clone_range(obs);
  Belief b{std::vector<double>(model.n_states(), 0.0)};
  std::size_t n = 0;
  for (std::size_t s = lo; s < hi; ++s) n += model.active(s);
  for (std::size_t s = lo; s < hi; ++s) {
    if (n == 0) {
      b.probs[s] = 1.0 / static_cast<double>(hi - lo);
    } else if (model.active(s)) {
      b.probs[s] = 1.0 / static_cast<double>(n);
    }
  }
  return b;
}

Belief filter_belief(const CloneHmm& model, const Belief& prior, ActionId action, ObsId obs) {
  if (prior.size() != model.n_states()) {
    throw InvalidArgument("belief size does not match model state count");
  }
  if (index(action) >= model.n_actions()) throw InvalidArgument("action out of range");
  const auto [lo, hi] = model.clone_range(obs);
  const std::size_t a = index(action);
  Belief post{std::vector<double>(model.n_states(), 0.0)};
  for (std::size_t i = 0; i < model.n_states(); ++i) {
    const double p = prior.probs[i];
    if (p == 0.0) continue;
    const auto r = model.row(a, i);
    for (std::size_t j = lo; j < hi; ++j) post.probs[j] += p * r[j];
  }
  double total = 0.0;
  for (std::size_t j = lo; j < hi; ++j) total += post.probs[j];
  if (total < kResetMass) return initial_belief(model, obs);
  for (std::size_t j = lo; j < hi; ++j) post.probs[j] /= total;
  return post;
}

}  // namespace clonemap
