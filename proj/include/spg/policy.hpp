#pragma once

/**
 * Conditional denoiser over masked sequences, with two interchangeable
 * parameterizations behind one value-type facade:
 *
 *  - Tabular: one logit row per (response position, context signature), the
 *    signature being the base-(V+1) encoding of every other position. Exact
 *    and enumerable; the workhorse behind all enumeration oracles. Zero
 *    initialization means a uniform policy.
 *
 *  - TinyNeural: token + position embeddings, one or two bidirectional
 *    attention mixing layers with a tanh MLP, and a shared output head.
 *    Gradients are hand-derived reverse-mode and exact; finite differences
 *    pin them in the test suite.
 *
 * Both expose the same surface: per-position distributions over the V
 * ordinary tokens, and accumulation of  scale * d/dtheta log pi(token | z)
 * into a caller-owned gradient buffer. Parameter mutation is single-writer;
 * everything else is read-only on theta.
 *
 * Checkpoints are a versioned text header followed by the parameters as
 * little-endian 64-bit floats; round-trips are bit-exact.
 */

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "spg/masking.hpp"
#include "spg/rng.hpp"
#include "spg/types.hpp"

namespace spg {

/// One gradient request: add scale * grad of log pi(token | state, position).
struct LogProbTerm {
  int position;  // response position, must be masked in the state
  TokenId token;
  double scale;
};

struct PredictedRow {
  int position;                // response position
  std::vector<double> probs;   // distribution over ordinary tokens
};

/// Distributions for the masked response positions of a state. Unmasked
/// positions carry point masses on their observed token and are not listed.
struct Prediction {
  std::vector<PredictedRow> masked_rows;
};

namespace detail {

inline void softmax(std::span<const double> logits, std::span<double> out) {
  double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

}  // namespace detail

// ============================================================================
// Tabular parameterization
// ============================================================================

class TabularPolicy {
 public:
  TabularPolicy(const Vocab& vocab, int prompt_len, int response_len,
                size_t param_limit = size_t{1} << 24)
      : vocab_(Vocab::validated(vocab)), prompt_len_(prompt_len), response_len_(response_len) {
    if (prompt_len < 0 || response_len < 1)
      throw InvalidArgument("tabular policy needs prompt_len >= 0 and response_len >= 1");
    int length = prompt_len + response_len;
    size_t contexts = 1;
    for (int p = 0; p + 1 < length; ++p) {
      contexts *= static_cast<size_t>(vocab_.size + 1);
      if (contexts > param_limit) throw InvalidArgument("tabular context table too large");
    }
    contexts_ = contexts;
    size_t count = static_cast<size_t>(response_len) * contexts_ * vocab_.size;
    if (count > param_limit) throw InvalidArgument("tabular context table too large");
    params_.assign(count, 0.0);
  }

  const Vocab& vocab() const { return vocab_; }
  int prompt_len() const { return prompt_len_; }
  int response_len() const { return response_len_; }
  int length() const { return prompt_len_ + response_len_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Base-(V+1) signature of every position except the predicted one. The
  /// predicted position is always mask, so dropping it loses nothing and the
  /// output cannot depend on how a mask is spelled at that slot.
  size_t context_signature(const std::vector<TokenId>& z, int response_pos) const {
    int skip = prompt_len_ + response_pos;
    size_t sig = 0;
    size_t base = static_cast<size_t>(vocab_.size + 1);
    for (int p = 0; p < length(); ++p) {
      if (p == skip) continue;
      TokenId tok = z[p];
      size_t digit = vocab_.is_mask(tok) ? static_cast<size_t>(vocab_.size)
                                         : static_cast<size_t>(tok);
      sig = sig * base + digit;
    }
    return sig;
  }

  std::span<const double> logits_row(const std::vector<TokenId>& z, int response_pos) const {
    size_t sig = context_signature(z, response_pos);
    size_t offset =
        ((static_cast<size_t>(response_pos) * contexts_) + sig) * vocab_.size;
    return {params_.data() + offset, static_cast<size_t>(vocab_.size)};
  }

  std::vector<std::vector<double>> forward_rows(const MaskedState& state) const {
    check_state(state);
    std::vector<std::vector<double>> rows(response_len_);
    for (int i = 0; i < response_len_; ++i) {
      rows[i].assign(vocab_.size, 0.0);
      TokenId tok = state.response(i);
      if (vocab_.is_mask(tok)) {
        detail::softmax(logits_row(state.z, i), rows[i]);
      } else {
        rows[i][tok] = 1.0;
      }
    }
    return rows;
  }

  void accumulate_grad(const MaskedState& state, std::span<const LogProbTerm> terms,
                       std::vector<double>& grad) const {
    check_state(state);
    std::vector<double> probs(vocab_.size);
    for (const LogProbTerm& term : terms) {
      if (!vocab_.is_mask(state.response(term.position)))
        throw InvalidArgument("gradient term targets an unmasked position");
      size_t sig = context_signature(state.z, term.position);
      size_t offset =
          ((static_cast<size_t>(term.position) * contexts_) + sig) * vocab_.size;
      detail::softmax({params_.data() + offset, static_cast<size_t>(vocab_.size)}, probs);
      for (int v = 0; v < vocab_.size; ++v)
        grad[offset + v] += term.scale * ((v == term.token ? 1.0 : 0.0) - probs[v]);
    }
  }

  void randomize(Rng& rng, double scale) {
    for (double& p : params_) p = scale * rng.normal();
  }

  /// Concentrates all mass on the given response at every context. A logit
  /// gap of 40 puts the leaked mass below 1e-17 per row.
  void set_point_mass(const TokenSequence& x, double logit_gap = 40.0) {
    std::fill(params_.begin(), params_.end(), 0.0);
    for (int i = 0; i < response_len_; ++i) {
      size_t base = (static_cast<size_t>(i) * contexts_) * vocab_.size;
      for (size_t c = 0; c < contexts_; ++c)
        params_[base + c * vocab_.size + x.response(i)] = logit_gap;
    }
  }

 private:
  void check_state(const MaskedState& state) const {
    if (state.length() != length() || state.prompt_len != prompt_len_)
      throw InvalidArgument("state shape does not match policy shape");
    for (TokenId tok : state.z)
      if (!vocab_.is_symbol(tok)) throw InvalidArgument("state carries an out-of-vocab token");
  }

  Vocab vocab_;
  int prompt_len_;
  int response_len_;
  size_t contexts_ = 0;
  std::vector<double> params_;
};

// ============================================================================
// Tiny neural parameterization
// ============================================================================

class TinyNeuralPolicy {
 public:
  TinyNeuralPolicy(const Vocab& vocab, int prompt_len, int response_len, int dim,
                   int hidden, int layers, uint64_t init_seed)
      : vocab_(Vocab::validated(vocab)),
        prompt_len_(prompt_len),
        response_len_(response_len),
        dim_(dim),
        hidden_(hidden),
        layers_(layers),
        init_seed_(init_seed) {
    if (prompt_len < 0 || response_len < 1)
      throw InvalidArgument("policy needs prompt_len >= 0 and response_len >= 1");
    if (dim < 1 || hidden < 1 || layers < 1 || layers > 4)
      throw InvalidArgument("bad tiny-neural shape");
    params_.assign(param_count_for(vocab_.size, length(), dim, hidden, layers), 0.0);
    init_params();
  }

  const Vocab& vocab() const { return vocab_; }
  int prompt_len() const { return prompt_len_; }
  int response_len() const { return response_len_; }
  int length() const { return prompt_len_ + response_len_; }
  int dim() const { return dim_; }
  int hidden() const { return hidden_; }
  int layers() const { return layers_; }
  uint64_t init_seed() const { return init_seed_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::vector<std::vector<double>> forward_rows(const MaskedState& state) const {
    Activations acts;
    forward(state, acts);
    std::vector<std::vector<double>> rows(response_len_);
    for (int i = 0; i < response_len_; ++i) {
      rows[i].assign(vocab_.size, 0.0);
      TokenId tok = state.response(i);
      if (vocab_.is_mask(tok)) {
        rows[i] = acts.probs[i];
      } else {
        rows[i][tok] = 1.0;
      }
    }
    return rows;
  }

  void accumulate_grad(const MaskedState& state, std::span<const LogProbTerm> terms,
                       std::vector<double>& grad) const {
    Activations acts;
    forward(state, acts);
    int L = length(), d = dim_, V = vocab_.size;

    // d logits from the requested log-prob terms
    std::vector<std::vector<double>> dlogits(response_len_);
    for (auto& row : dlogits) row.assign(V, 0.0);
    for (const LogProbTerm& term : terms) {
      if (!vocab_.is_mask(state.response(term.position)))
        throw InvalidArgument("gradient term targets an unmasked position");
      const std::vector<double>& p = acts.probs[term.position];
      std::vector<double>& out = dlogits[term.position];
      for (int v = 0; v < V; ++v)
        out[v] += term.scale * ((v == term.token ? 1.0 : 0.0) - p[v]);
    }

    Layout lay = layout();
    const double* W = params_.data();
    std::vector<double> dH(static_cast<size_t>(L) * d, 0.0);

    // head
    for (int i = 0; i < response_len_; ++i) {
      int p = prompt_len_ + i;
      const double* h = acts.final_h.data() + static_cast<size_t>(p) * d;
      for (int c = 0; c < V; ++c) {
        double g = dlogits[i][c];
        if (g == 0.0) continue;
        grad[lay.bhead + c] += g;
        for (int r = 0; r < d; ++r) {
          grad[lay.whead + static_cast<size_t>(r) * V + c] += h[r] * g;
          dH[static_cast<size_t>(p) * d + r] += W[lay.whead + static_cast<size_t>(r) * V + c] * g;
        }
      }
    }

    // mixing layers, reverse order
    for (int l = layers_ - 1; l >= 0; --l) {
      const LayerCache& cache = acts.layer[l];
      LayerOffsets off = lay.layer[l];

      // H2 = H1 + U W2 + b2
      std::vector<double> dU(static_cast<size_t>(L) * hidden_, 0.0);
      for (int p = 0; p < L; ++p) {
        for (int c = 0; c < d; ++c) {
          double g = dH[static_cast<size_t>(p) * d + c];
          if (g == 0.0) continue;
          grad[off.b2 + c] += g;
          for (int j = 0; j < hidden_; ++j) {
            grad[off.w2 + static_cast<size_t>(j) * d + c] +=
                cache.u[static_cast<size_t>(p) * hidden_ + j] * g;
            dU[static_cast<size_t>(p) * hidden_ + j] +=
                W[off.w2 + static_cast<size_t>(j) * d + c] * g;
          }
        }
      }
      // U = tanh(H1 W1 + b1); dH stays the gradient of H1 (residual)
      for (int p = 0; p < L; ++p) {
        for (int j = 0; j < hidden_; ++j) {
          double u = cache.u[static_cast<size_t>(p) * hidden_ + j];
          double gpre = dU[static_cast<size_t>(p) * hidden_ + j] * (1.0 - u * u);
          if (gpre == 0.0) continue;
          grad[off.b1 + j] += gpre;
          for (int r = 0; r < d; ++r) {
            grad[off.w1 + static_cast<size_t>(r) * hidden_ + j] +=
                cache.h1[static_cast<size_t>(p) * d + r] * gpre;
            dH[static_cast<size_t>(p) * d + r] += W[off.w1 + static_cast<size_t>(r) * hidden_ + j] * gpre;
          }
        }
      }

      // H1 = Hin + (A Vv) Wo
      std::vector<double> dC(static_cast<size_t>(L) * d, 0.0);
      for (int p = 0; p < L; ++p) {
        for (int c = 0; c < d; ++c) {
          double g = dH[static_cast<size_t>(p) * d + c];
          if (g == 0.0) continue;
          for (int r = 0; r < d; ++r) {
            grad[off.wo + static_cast<size_t>(r) * d + c] +=
                cache.c[static_cast<size_t>(p) * d + r] * g;
            dC[static_cast<size_t>(p) * d + r] += W[off.wo + static_cast<size_t>(r) * d + c] * g;
          }
        }
      }
      // C = A Vv
      std::vector<double> dA(static_cast<size_t>(L) * L, 0.0);
      std::vector<double> dVv(static_cast<size_t>(L) * d, 0.0);
      for (int p = 0; p < L; ++p) {
        for (int q = 0; q < L; ++q) {
          double a = cache.a[static_cast<size_t>(p) * L + q];
          double acc = 0.0;
          for (int r = 0; r < d; ++r) {
            double g = dC[static_cast<size_t>(p) * d + r];
            acc += g * cache.v[static_cast<size_t>(q) * d + r];
            dVv[static_cast<size_t>(q) * d + r] += a * g;
          }
          dA[static_cast<size_t>(p) * L + q] = acc;
        }
      }
      // A = row softmax(S)
      std::vector<double> dS(static_cast<size_t>(L) * L, 0.0);
      for (int p = 0; p < L; ++p) {
        double dot = 0.0;
        for (int q = 0; q < L; ++q)
          dot += dA[static_cast<size_t>(p) * L + q] * cache.a[static_cast<size_t>(p) * L + q];
        for (int q = 0; q < L; ++q)
          dS[static_cast<size_t>(p) * L + q] =
              cache.a[static_cast<size_t>(p) * L + q] * (dA[static_cast<size_t>(p) * L + q] - dot);
      }
      // S = Q K^T / sqrt(d)
      double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
      std::vector<double> dQ(static_cast<size_t>(L) * d, 0.0);
      std::vector<double> dK(static_cast<size_t>(L) * d, 0.0);
      for (int p = 0; p < L; ++p) {
        for (int q = 0; q < L; ++q) {
          double g = dS[static_cast<size_t>(p) * L + q] * inv_sqrt_d;
          if (g == 0.0) continue;
          for (int r = 0; r < d; ++r) {
            dQ[static_cast<size_t>(p) * d + r] += g * cache.k[static_cast<size_t>(q) * d + r];
            dK[static_cast<size_t>(q) * d + r] += g * cache.q[static_cast<size_t>(p) * d + r];
          }
        }
      }
      // Q = Hin Wq, K = Hin Wk, Vv = Hin Wv
      auto back_proj = [&](const std::vector<double>& dOut, size_t w_off) {
        for (int p = 0; p < L; ++p)
          for (int c = 0; c < d; ++c) {
            double g = dOut[static_cast<size_t>(p) * d + c];
            if (g == 0.0) continue;
            for (int r = 0; r < d; ++r) {
              grad[w_off + static_cast<size_t>(r) * d + c] +=
                  cache.hin[static_cast<size_t>(p) * d + r] * g;
              dH[static_cast<size_t>(p) * d + r] += W[w_off + static_cast<size_t>(r) * d + c] * g;
            }
          }
      };
      back_proj(dQ, off.wq);
      back_proj(dK, off.wk);
      back_proj(dVv, off.wv);
    }

    // embeddings
    for (int p = 0; p < L; ++p) {
      size_t sym = symbol_index(state.z[p]);
      for (int r = 0; r < d; ++r) {
        double g = dH[static_cast<size_t>(p) * d + r];
        grad[lay.embed + sym * d + r] += g;
        grad[lay.pos + static_cast<size_t>(p) * d + r] += g;
      }
    }
  }

  static size_t param_count_for(int V, int L, int d, int h, int layers) {
    size_t n = static_cast<size_t>(V + 1) * d;  // token embeddings incl. mask
    n += static_cast<size_t>(L) * d;            // position embeddings
    n += static_cast<size_t>(layers) *
         (4 * static_cast<size_t>(d) * d + static_cast<size_t>(d) * h + h +
          static_cast<size_t>(h) * d + d);
    n += static_cast<size_t>(d) * V + V;  // head
    return n;
  }

 private:
  struct LayerOffsets {
    size_t wq, wk, wv, wo, w1, b1, w2, b2;
  };
  struct Layout {
    size_t embed, pos;
    std::vector<LayerOffsets> layer;
    size_t whead, bhead;
  };

  Layout layout() const {
    Layout lay;
    size_t at = 0;
    int d = dim_, h = hidden_, V = vocab_.size, L = length();
    lay.embed = at;
    at += static_cast<size_t>(V + 1) * d;
    lay.pos = at;
    at += static_cast<size_t>(L) * d;
    for (int l = 0; l < layers_; ++l) {
      LayerOffsets off;
      off.wq = at; at += static_cast<size_t>(d) * d;
      off.wk = at; at += static_cast<size_t>(d) * d;
      off.wv = at; at += static_cast<size_t>(d) * d;
      off.wo = at; at += static_cast<size_t>(d) * d;
      off.w1 = at; at += static_cast<size_t>(d) * h;
      off.b1 = at; at += static_cast<size_t>(h);
      off.w2 = at; at += static_cast<size_t>(h) * d;
      off.b2 = at; at += static_cast<size_t>(d);
      lay.layer.push_back(off);
    }
    lay.whead = at;
    at += static_cast<size_t>(d) * V;
    lay.bhead = at;
    return lay;
  }

  struct LayerCache {
    std::vector<double> hin, q, k, v, a, c, h1, u;
  };
  struct Activations {
    std::vector<LayerCache> layer;
    std::vector<double> final_h;
    std::vector<std::vector<double>> probs;  // response positions
  };

  size_t symbol_index(TokenId tok) const {
    if (vocab_.is_mask(tok)) return static_cast<size_t>(vocab_.size);
    if (!vocab_.is_token(tok)) throw InvalidArgument("state carries an out-of-vocab token");
    return static_cast<size_t>(tok);
  }

  void forward(const MaskedState& state, Activations& acts) const {
    if (state.length() != length() || state.prompt_len != prompt_len_)
      throw InvalidArgument("state shape does not match policy shape");
    int L = length(), d = dim_, V = vocab_.size;
    Layout lay = layout();
    const double* W = params_.data();

    std::vector<double> H(static_cast<size_t>(L) * d);
    for (int p = 0; p < L; ++p) {
      size_t sym = symbol_index(state.z[p]);
      for (int r = 0; r < d; ++r)
        H[static_cast<size_t>(p) * d + r] =
            W[lay.embed + sym * d + r] + W[lay.pos + static_cast<size_t>(p) * d + r];
    }

    acts.layer.resize(layers_);
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (int l = 0; l < layers_; ++l) {
      LayerCache& cache = acts.layer[l];
      LayerOffsets off = lay.layer[l];
      cache.hin = H;
      auto proj = [&](size_t w_off, std::vector<double>& out) {
        out.assign(static_cast<size_t>(L) * d, 0.0);
        for (int p = 0; p < L; ++p)
          for (int r = 0; r < d; ++r) {
            double x = cache.hin[static_cast<size_t>(p) * d + r];
            if (x == 0.0) continue;
            for (int c = 0; c < d; ++c)
              out[static_cast<size_t>(p) * d + c] += x * W[w_off + static_cast<size_t>(r) * d + c];
          }
      };
      proj(off.wq, cache.q);
      proj(off.wk, cache.k);
      proj(off.wv, cache.v);

      cache.a.assign(static_cast<size_t>(L) * L, 0.0);
      std::vector<double> scores(L);
      for (int p = 0; p < L; ++p) {
        for (int q = 0; q < L; ++q) {
          double dot = 0.0;
          for (int r = 0; r < d; ++r)
            dot += cache.q[static_cast<size_t>(p) * d + r] * cache.k[static_cast<size_t>(q) * d + r];
          scores[q] = dot * inv_sqrt_d;
        }
        detail::softmax(scores, {cache.a.data() + static_cast<size_t>(p) * L,
                                 static_cast<size_t>(L)});
      }

      cache.c.assign(static_cast<size_t>(L) * d, 0.0);
      for (int p = 0; p < L; ++p)
        for (int q = 0; q < L; ++q) {
          double a = cache.a[static_cast<size_t>(p) * L + q];
          if (a == 0.0) continue;
          for (int r = 0; r < d; ++r)
            cache.c[static_cast<size_t>(p) * d + r] += a * cache.v[static_cast<size_t>(q) * d + r];
        }

      cache.h1 = cache.hin;
      for (int p = 0; p < L; ++p)
        for (int c = 0; c < d; ++c) {
          double m = 0.0;
          for (int r = 0; r < d; ++r)
            m += cache.c[static_cast<size_t>(p) * d + r] * W[off.wo + static_cast<size_t>(r) * d + c];
          cache.h1[static_cast<size_t>(p) * d + c] += m;
        }

      cache.u.assign(static_cast<size_t>(L) * hidden_, 0.0);
      for (int p = 0; p < L; ++p)
        for (int j = 0; j < hidden_; ++j) {
          double pre = W[off.b1 + j];
          for (int r = 0; r < d; ++r)
            pre += cache.h1[static_cast<size_t>(p) * d + r] *
                   W[off.w1 + static_cast<size_t>(r) * hidden_ + j];
          cache.u[static_cast<size_t>(p) * hidden_ + j] = std::tanh(pre);
        }

      H = cache.h1;
      for (int p = 0; p < L; ++p)
        for (int c = 0; c < d; ++c) {
          double m = W[off.b2 + c];
          for (int j = 0; j < hidden_; ++j)
            m += cache.u[static_cast<size_t>(p) * hidden_ + j] *
                 W[off.w2 + static_cast<size_t>(j) * d + c];
          H[static_cast<size_t>(p) * d + c] += m;
        }
    }
    acts.final_h = H;

    acts.probs.resize(response_len_);
    std::vector<double> logits(V);
    for (int i = 0; i < response_len_; ++i) {
      int p = prompt_len_ + i;
      for (int c = 0; c < V; ++c) {
        double x = W[lay.bhead + c];
        for (int r = 0; r < d; ++r)
          x += H[static_cast<size_t>(p) * d + r] * W[lay.whead + static_cast<size_t>(r) * V + c];
        logits[c] = x;
      }
      acts.probs[i].assign(V, 0.0);
      detail::softmax(logits, acts.probs[i]);
    }
  }

  void init_params() {
    Rng rng(init_seed_);
    Layout lay = layout();
    int d = dim_, h = hidden_, V = vocab_.size, L = length();
    auto fill_normal = [&](size_t off, size_t count, double scale) {
      for (size_t i = 0; i < count; ++i) params_[off + i] = scale * rng.normal();
    };
    fill_normal(lay.embed, static_cast<size_t>(V + 1) * d, 0.5);
    fill_normal(lay.pos, static_cast<size_t>(L) * d, 0.5);
    double wd = 0.5 / std::sqrt(static_cast<double>(d));
    double wh = 0.5 / std::sqrt(static_cast<double>(h));
    for (int l = 0; l < layers_; ++l) {
      LayerOffsets off = lay.layer[l];
      fill_normal(off.wq, static_cast<size_t>(d) * d, wd);
      fill_normal(off.wk, static_cast<size_t>(d) * d, wd);
      fill_normal(off.wv, static_cast<size_t>(d) * d, wd);
      fill_normal(off.wo, static_cast<size_t>(d) * d, wd);
      fill_normal(off.w1, static_cast<size_t>(d) * h, wd);
      fill_normal(off.w2, static_cast<size_t>(h) * d, wh);
      // biases stay zero
    }
    fill_normal(lay.whead, static_cast<size_t>(d) * V, wd);
  }

  Vocab vocab_;
  int prompt_len_;
  int response_len_;
  int dim_;
  int hidden_;
  int layers_;
  uint64_t init_seed_;
  std::vector<double> params_;
};

// ============================================================================
// Facade
// ============================================================================

enum class Parameterization { Tabular, TinyNeural };

class Policy {
 public:
  static Policy tabular(const Vocab& vocab, int prompt_len, int response_len) {
    return Policy(TabularPolicy(vocab, prompt_len, response_len));
  }
  static Policy tiny_neural(const Vocab& vocab, int prompt_len, int response_len,
                            int dim, int hidden, int layers, uint64_t init_seed) {
    return Policy(TinyNeuralPolicy(vocab, prompt_len, response_len, dim, hidden,
                                   layers, init_seed));
  }

  Parameterization parameterization() const {
    return std::holds_alternative<TabularPolicy>(impl_) ? Parameterization::Tabular
                                                        : Parameterization::TinyNeural;
  }

  const Vocab& vocab() const {
    return std::visit([](const auto& p) -> const Vocab& { return p.vocab(); }, impl_);
  }
  int prompt_len() const {
    return std::visit([](const auto& p) { return p.prompt_len(); }, impl_);
  }
  int response_len() const {
    return std::visit([](const auto& p) { return p.response_len(); }, impl_);
  }
  int length() const { return prompt_len() + response_len(); }

  std::vector<double>& params() {
    return std::visit([](auto& p) -> std::vector<double>& { return p.params(); }, impl_);
  }
  const std::vector<double>& params() const {
    return std::visit([](const auto& p) -> const std::vector<double>& { return p.params(); },
                      impl_);
  }
  size_t param_count() const { return params().size(); }

  /// Distribution rows for all response positions; unmasked rows are point
  /// masses on the observed token. Read-only on theta.
  std::vector<std::vector<double>> forward_rows(const MaskedState& state) const {
    return std::visit([&](const auto& p) { return p.forward_rows(state); }, impl_);
  }

  Prediction predict(const MaskedState& state) const {
    auto rows = forward_rows(state);
    Prediction pred;
    for (int i = 0; i < response_len(); ++i)
      if (vocab().is_mask(state.response(i)))
        pred.masked_rows.push_back({i, std::move(rows[i])});
    return pred;
  }

  /// Adds  sum_k scale_k * grad log pi(token_k | state, pos_k)  to grad.
  void accumulate_grad(const MaskedState& state, std::span<const LogProbTerm> terms,
                       std::vector<double>& grad) const {
    if (grad.size() != param_count())
      throw InvalidArgument("gradient buffer size mismatch");
    std::visit([&](const auto& p) { p.accumulate_grad(state, terms, grad); }, impl_);
  }

  TabularPolicy& as_tabular() { return std::get<TabularPolicy>(impl_); }
  const TabularPolicy& as_tabular() const { return std::get<TabularPolicy>(impl_); }

  // ---- checkpoint format -------------------------------------------------

  void save(std::ostream& out) const {
    out << "spg-checkpoint v1\n";
    if (parameterization() == Parameterization::Tabular) {
      out << "parameterization tabular\n";
      out << "vocab " << vocab().size << "\n";
      out << "mask_id " << vocab().mask_id << "\n";
      out << "prompt_len " << prompt_len() << "\n";
      out << "response_len " << response_len() << "\n";
      out << "seed 0\n";
    } else {
      const auto& p = std::get<TinyNeuralPolicy>(impl_);
      out << "parameterization tiny-neural\n";
      out << "vocab " << vocab().size << "\n";
      out << "mask_id " << vocab().mask_id << "\n";
      out << "prompt_len " << prompt_len() << "\n";
      out << "response_len " << response_len() << "\n";
      out << "dim " << p.dim() << "\n";
      out << "hidden " << p.hidden() << "\n";
      out << "layers " << p.layers() << "\n";
      out << "seed " << p.init_seed() << "\n";
    }
    const std::vector<double>& theta = params();
    out << "params " << theta.size() << "\n";
    for (double value : theta) {
      uint64_t bits = std::bit_cast<uint64_t>(value);
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      out.write(bytes, 8);
    }
  }

  static Policy load(std::istream& in) {
    std::string line;
    auto next_line = [&]() -> std::string {
      if (!std::getline(in, line)) throw InvalidArgument("truncated checkpoint header");
      return line;
    };
    if (next_line() != "spg-checkpoint v1")
      throw InvalidArgument("unrecognized checkpoint format tag");
    auto field = [&](const std::string& key) -> std::string {
      std::string l = next_line();
      if (l.rfind(key + " ", 0) != 0)
        throw InvalidArgument("checkpoint header: expected field '" + key + "'");
      return l.substr(key.size() + 1);
    };
    std::string kind = field("parameterization");
    int vocab_size = std::stoi(field("vocab"));
    TokenId mask_id = std::stoi(field("mask_id"));
    int prompt_len = std::stoi(field("prompt_len"));
    int response_len = std::stoi(field("response_len"));
    Vocab vocab = Vocab::validated({vocab_size, mask_id});

    Policy policy = [&]() {
      if (kind == "tabular") {
        field("seed");
        return Policy::tabular(vocab, prompt_len, response_len);
      }
      if (kind == "tiny-neural") {
        int dim = std::stoi(field("dim"));
        int hidden = std::stoi(field("hidden"));
        int layers = std::stoi(field("layers"));
        uint64_t seed = std::stoull(field("seed"));
        return Policy::tiny_neural(vocab, prompt_len, response_len, dim, hidden, layers, seed);
      }
      throw InvalidArgument("unknown parameterization '" + kind + "'");
    }();

    size_t count = std::stoull(field("params"));
    if (count != policy.param_count())
      throw InvalidArgument("checkpoint parameter count does not match shape");
    std::vector<double>& theta = policy.params();
    for (size_t i = 0; i < count; ++i) {
      char bytes[8];
      in.read(bytes, 8);
      if (!in) throw InvalidArgument("truncated checkpoint payload");
      uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[b])) << (8 * b);
      theta[i] = std::bit_cast<double>(bits);
    }
    return policy;
  }

 private:
  explicit Policy(TabularPolicy p) : impl_(std::move(p)) {}
  explicit Policy(TinyNeuralPolicy p) : impl_(std::move(p)) {}

  std::variant<TabularPolicy, TinyNeuralPolicy> impl_;
};

}  // namespace spg
