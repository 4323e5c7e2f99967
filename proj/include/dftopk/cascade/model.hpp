// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file model.hpp
/// Two-tower retrieval scorer and MLP ranker with hand-coded backprop.
///
///   user tower   e_u = W2u tanh(W1u u + b1u) + b2u            (D_u -> H -> E)
///   item tower   e_v = W2i tanh(W1i v + b1i) + b2i            (D_i -> H -> E)
///   retrieval    r   = <e_u, e_v>
///   ranker       s   = w2r . tanh(W1r [u; v] + b1r) + b2r     (D_u + D_i -> H -> 1)
///
/// All parameters live in one flat vector, blocks in the order listed by
/// ModelShape::blocks(); matrices are row-major (output-major).

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dftopk/cascade/dataset.hpp"
#include "dftopk/numeric.hpp"

namespace dftopk::cascade {

struct ModelShape {
  std::size_t user_dim = 16;
  std::size_t item_dim = 16;
  std::size_t hidden = 32;
  std::size_t embed = 8;

  struct Block {
    const char* name;
    std::size_t rows;
    std::size_t cols;
  };

  std::array<Block, 12> blocks() const {
    return {{{"user.w1", hidden, user_dim},
             {"user.b1", hidden, 1},
             {"user.w2", embed, hidden},
             {"user.b2", embed, 1},
             {"item.w1", hidden, item_dim},
             {"item.b1", hidden, 1},
             {"item.w2", embed, hidden},
             {"item.b2", embed, 1},
             {"rank.w1", hidden, user_dim + item_dim},
             {"rank.b1", hidden, 1},
             {"rank.w2", 1, hidden},
             {"rank.b2", 1, 1}}};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks()) n += b.rows * b.cols;
    return n;
  }

  bool operator==(const ModelShape&) const = default;
};

inline ModelShape shape_from(const TrainConfig& cfg) {
  return ModelShape{cfg.user_dim, cfg.item_dim, cfg.hidden, cfg.embed};
}

/// Offsets of every block inside the flat parameter vector.
struct Layout {
  explicit Layout(const ModelShape& s) {
    std::size_t off = 0;
    std::size_t i = 0;
    for (const auto& b : s.blocks()) {
      offset[i++] = off;
      off += b.rows * b.cols;
    }
  }
  enum : std::size_t { kUw1, kUb1, kUw2, kUb2, kIw1, kIb1, kIw2, kIb2, kRw1, kRb1, kRw2, kRb2 };
  std::array<std::size_t, 12> offset{};
};

struct CascadeModel {
  ModelShape shape;
  std::vector<double> params;

  bool operator==(const CascadeModel&) const = default;
};

/// Gaussian weights with variance 1/fan_in, zero biases.
inline CascadeModel init_model(const ModelShape& shape, std::uint64_t seed) {
  CascadeModel m{shape, std::vector<double>(shape.parameter_count(), 0.0)};
  auto seq = detail::make_seed_seq(seed, 0, 0, 0x30de1u);
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t off = 0;
  for (const auto& b : shape.blocks()) {
    const std::size_t n = b.rows * b.cols;
    if (b.cols > 1) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(b.cols));
      for (std::size_t i = 0; i < n; ++i) m.params[off + i] = normal(rng) * scale;
    }
    off += n;
  }
  return m;
}

inline void require_shape(const ModelShape& s, const PVRecord& pv) {
  if (pv.user_features.size() != s.user_dim) {
    throw ValidationError("user feature length " + std::to_string(pv.user_features.size()) +
                          " != model user_dim " + std::to_string(s.user_dim));
  }
  if (pv.size() == 0 || pv.item_features.size() != pv.size() * s.item_dim) {
    throw ValidationError("item feature rows do not match model item_dim " +
                          std::to_string(s.item_dim));
  }
}

namespace detail {

// out = W x + b for W (rows x cols) at p + w, b at p + b
template <typename T, typename X>
void affine(const T* w, const T* b, const X* x, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = b[r];
    const T* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * static_cast<T>(x[c]);
    out[r] = acc;
  }
}

template <typename T>
T tanh_(T v) {
  if constexpr (std::is_same_v<T, double> || std::is_same_v<T, float> ||
                std::is_same_v<T, long double>) {
    return std::tanh(v);
  } else {
    const T e = math::exp(T(-2) * math::abs(v));
    const T t = (T(1) - e) / (T(1) + e);
    return v < T(0) ? -t : t;
  }
}

}  // namespace detail

/// Retrieval and ranking scores of one PV for parameters `p` (any real type).
template <typename T>
std::pair<std::vector<T>, std::vector<T>> forward_scores(const ModelShape& s,
                                                         std::span<const T> p,
                                                         const PVRecord& pv) {
  require_shape(s, pv);
  if (p.size() != s.parameter_count()) throw ValidationError("parameter vector has wrong length");
  const Layout L(s);
  const std::size_t H = s.hidden, E = s.embed, Du = s.user_dim, Di = s.item_dim;
  const T* P = p.data();
  const double* u = pv.user_features.data();

  std::vector<T> h(H), eu(E), ev(E);
  detail::affine(P + L.offset[L.kUw1], P + L.offset[L.kUb1], u, H, Du, h.data());
  for (auto& v : h) v = detail::tanh_(v);
  detail::affine(P + L.offset[L.kUw2], P + L.offset[L.kUb2], h.data(), E, H, eu.data());

  // user half of the ranker's first layer, shared by all items
  std::vector<T> ru(H);
  {
    const T* w = P + L.offset[L.kRw1];
    for (std::size_t r = 0; r < H; ++r) {
      T acc = P[L.offset[L.kRb1] + r];
      for (std::size_t c = 0; c < Du; ++c) acc += w[r * (Du + Di) + c] * static_cast<T>(u[c]);
      ru[r] = acc;
    }
  }

  const std::size_t n = pv.size();
  std::vector<T> retrieval(n), ranking(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* v = pv.item_features.data() + j * Di;
    detail::affine(P + L.offset[L.kIw1], P + L.offset[L.kIb1], v, H, Di, h.data());
    for (auto& x : h) x = detail::tanh_(x);
    detail::affine(P + L.offset[L.kIw2], P + L.offset[L.kIb2], h.data(), E, H, ev.data());
    T dot = T(0);
    for (std::size_t e = 0; e < E; ++e) dot += eu[e] * ev[e];
    retrieval[j] = dot;

    const T* w = P + L.offset[L.kRw1];
    T out = P[L.offset[L.kRb2]];
    for (std::size_t r = 0; r < H; ++r) {
      T acc = ru[r];
      const T* row = w + r * (Du + Di) + Du;
      for (std::size_t c = 0; c < Di; ++c) acc += row[c] * static_cast<T>(v[c]);
      out += P[L.offset[L.kRw2] + r] * detail::tanh_(acc);
    }
    ranking[j] = out;
  }
  return {std::move(retrieval), std::move(ranking)};
}

inline std::pair<std::vector<double>, std::vector<double>> forward_scores(const CascadeModel& m,
                                                                          const PVRecord& pv) {
  return forward_scores<double>(m.shape, std::span<const double>(m.params), pv);
}

/// Forward pass that keeps the activations needed by backward().
struct ForwardCache {
  std::vector<double> hu;  // H
  std::vector<double> eu;  // E
  std::vector<double> hi;  // N x H
  std::vector<double> ev;  // N x E
  std::vector<double> hr;  // N x H
  std::vector<double> retrieval;
  std::vector<double> ranking;
};

inline ForwardCache forward_cached(const CascadeModel& m, const PVRecord& pv) {
  const auto& s = m.shape;
  require_shape(s, pv);
  const Layout L(s);
  const std::size_t H = s.hidden, E = s.embed, Du = s.user_dim, Di = s.item_dim;
  const std::size_t n = pv.size();
  const double* P = m.params.data();
  const double* u = pv.user_features.data();

  ForwardCache c;
  c.hu.resize(H);
  c.eu.resize(E);
  c.hi.resize(n * H);
  c.ev.resize(n * E);
  c.hr.resize(n * H);
  c.retrieval.resize(n);
  c.ranking.resize(n);

  detail::affine(P + L.offset[L.kUw1], P + L.offset[L.kUb1], u, H, Du, c.hu.data());
  for (auto& v : c.hu) v = std::tanh(v);
  detail::affine(P + L.offset[L.kUw2], P + L.offset[L.kUb2], c.hu.data(), E, H, c.eu.data());

  std::vector<double> ru(H);
  const double* rw = P + L.offset[L.kRw1];
  for (std::size_t r = 0; r < H; ++r) {
    double acc = P[L.offset[L.kRb1] + r];
    for (std::size_t q = 0; q < Du; ++q) acc += rw[r * (Du + Di) + q] * u[q];
    ru[r] = acc;
  }

  for (std::size_t j = 0; j < n; ++j) {
    const double* v = pv.item_features.data() + j * Di;
    double* hi = c.hi.data() + j * H;
    double* ev = c.ev.data() + j * E;
    detail::affine(P + L.offset[L.kIw1], P + L.offset[L.kIb1], v, H, Di, hi);
    for (std::size_t r = 0; r < H; ++r) hi[r] = std::tanh(hi[r]);
    detail::affine(P + L.offset[L.kIw2], P + L.offset[L.kIb2], hi, E, H, ev);
    double dot = 0.0;
    for (std::size_t e = 0; e < E; ++e) dot += c.eu[e] * ev[e];
    c.retrieval[j] = dot;

    double* hr = c.hr.data() + j * H;
    double out = P[L.offset[L.kRb2]];
    for (std::size_t r = 0; r < H; ++r) {
      double acc = ru[r];
      const double* row = rw + r * (Du + Di) + Du;
      for (std::size_t q = 0; q < Di; ++q) acc += row[q] * v[q];
      hr[r] = std::tanh(acc);
      out += P[L.offset[L.kRw2] + r] * hr[r];
    }
    c.ranking[j] = out;
  }
  return c;
}

/// Accumulates into `grad` the parameter gradient given dL/d(retrieval) and
/// dL/d(ranking) for the PV that produced `c`.
inline void backward(const CascadeModel& m, const PVRecord& pv, const ForwardCache& c,
                     std::span<const double> d_retrieval, std::span<const double> d_ranking,
                     std::span<double> grad) {
  const auto& s = m.shape;
  const Layout L(s);
  const std::size_t H = s.hidden, E = s.embed, Du = s.user_dim, Di = s.item_dim;
  const std::size_t n = pv.size();
  const double* P = m.params.data();
  double* G = grad.data();
  const double* u = pv.user_features.data();

  std::vector<double> deu(E, 0.0), dz(H), dru(H, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double* v = pv.item_features.data() + j * Di;
    const double dr = d_retrieval[j];
    const double* ev = c.ev.data() + j * E;
    const double* hi = c.hi.data() + j * H;
    if (dr != 0.0) {
      for (std::size_t e = 0; e < E; ++e) deu[e] += dr * ev[e];
      // item tower with d(ev) = dr * eu
      for (std::size_t e = 0; e < E; ++e) {
        const double de = dr * c.eu[e];
        G[L.offset[L.kIb2] + e] += de;
        double* gw = G + L.offset[L.kIw2] + e * H;
        for (std::size_t r = 0; r < H; ++r) gw[r] += de * hi[r];
      }
      for (std::size_t r = 0; r < H; ++r) {
        double acc = 0.0;
        for (std::size_t e = 0; e < E; ++e) acc += P[L.offset[L.kIw2] + e * H + r] * dr * c.eu[e];
        dz[r] = acc * (1.0 - hi[r] * hi[r]);
      }
      for (std::size_t r = 0; r < H; ++r) {
        G[L.offset[L.kIb1] + r] += dz[r];
        double* gw = G + L.offset[L.kIw1] + r * Di;
        for (std::size_t q = 0; q < Di; ++q) gw[q] += dz[r] * v[q];
      }
    }

    const double ds = d_ranking[j];
    if (ds != 0.0) {
      const double* hr = c.hr.data() + j * H;
      G[L.offset[L.kRb2]] += ds;
      for (std::size_t r = 0; r < H; ++r) {
        G[L.offset[L.kRw2] + r] += ds * hr[r];
        const double d = ds * P[L.offset[L.kRw2] + r] * (1.0 - hr[r] * hr[r]);
        dru[r] += d;
        double* gw = G + L.offset[L.kRw1] + r * (Du + Di) + Du;
        for (std::size_t q = 0; q < Di; ++q) gw[q] += d * v[q];
      }
    }
  }

  // ranker: user half and bias collect the per-item sums
  for (std::size_t r = 0; r < H; ++r) {
    G[L.offset[L.kRb1] + r] += dru[r];
    double* gw = G + L.offset[L.kRw1] + r * (Du + Di);
    for (std::size_t q = 0; q < Du; ++q) gw[q] += dru[r] * u[q];
  }

  // user tower
  for (std::size_t e = 0; e < E; ++e) {
    G[L.offset[L.kUb2] + e] += deu[e];
    double* gw = G + L.offset[L.kUw2] + e * H;
    for (std::size_t r = 0; r < H; ++r) gw[r] += deu[e] * c.hu[r];
  }
  for (std::size_t r = 0; r < H; ++r) {
    double acc = 0.0;
    for (std::size_t e = 0; e < E; ++e) acc += P[L.offset[L.kUw2] + e * H + r] * deu[e];
    const double d = acc * (1.0 - c.hu[r] * c.hu[r]);
    G[L.offset[L.kUb1] + r] += d;
    double* gw = G + L.offset[L.kUw1] + r * Du;
    for (std::size_t q = 0; q < Du; ++q) gw[q] += d * u[q];
  }
}

// ---------------------------------------------------------------------------
// Model file, little-endian:
//   bytes 0-3   magic "DFTK"
//   u32         version (1)
//   u32 x 4     user_dim, item_dim, hidden, embed
//   f64 x P     parameter blocks in ModelShape::blocks() order, row-major

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("model file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ValidationError("model file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace detail

inline void save_model(std::ostream& os, const CascadeModel& m) {
  os.write("DFTK", 4);
  detail::put_u32(os, kModelFormatVersion);
  for (std::size_t d : {m.shape.user_dim, m.shape.item_dim, m.shape.hidden, m.shape.embed}) {
    detail::put_u32(os, static_cast<std::uint32_t>(d));
  }
  for (double v : m.params) detail::put_f64(os, v);
}

inline CascadeModel load_model(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DFTK", 4) != 0) {
    throw ValidationError("not a model file (bad magic)");
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != kModelFormatVersion) {
    throw ValidationError("unsupported model file version " + std::to_string(version));
  }
  CascadeModel m;
  m.shape.user_dim = detail::get_u32(is);
  m.shape.item_dim = detail::get_u32(is);
  m.shape.hidden = detail::get_u32(is);
  m.shape.embed = detail::get_u32(is);
  if (m.shape.user_dim == 0 || m.shape.item_dim == 0 || m.shape.hidden == 0 ||
      m.shape.embed == 0) {
    throw ValidationError("model file has a zero dimension");
  }
  m.params.resize(m.shape.parameter_count());
  for (auto& v : m.params) v = detail::get_f64(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw ValidationError("model file has trailing bytes");
  }
  return m;
}

}  // namespace dftopk::cascade
