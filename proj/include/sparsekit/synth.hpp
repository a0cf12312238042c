#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sparsekit/container.hpp"
#include "sparsekit/curve.hpp"
#include "sparsekit/error.hpp"

namespace sparsekit {

struct Distribution {
  enum class Kind { normal, uniform, spike_at_zero } kind = Kind::normal;
  double zero_probability = 0.0;  // spike_at_zero only
  double scale = 1.0;             // normal stddev, or uniform half-width
};

struct SynthTensor {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
};

struct SynthSpec {
  Distribution distribution;
  std::vector<SynthTensor> tensors;
  std::uint64_t seed = 0;
};

/// "normal", "uniform", or "spike:<p>" with an optional "@<scale>" suffix.
inline Distribution parse_distribution(const std::string& text) {
  Distribution d;
  std::string body = text;
  if (const auto at = body.find('@'); at != std::string::npos) {
    d.scale = detail::parse_real(body.substr(at + 1), "distribution scale");
    body.resize(at);
    if (!(d.scale > 0.0)) fail(ErrorKind::usage, "distribution scale must be positive");
  }
  if (body == "normal") {
    d.kind = Distribution::Kind::normal;
  } else if (body == "uniform") {
    d.kind = Distribution::Kind::uniform;
  } else if (body.rfind("spike:", 0) == 0) {
    d.kind = Distribution::Kind::spike_at_zero;
    d.zero_probability = detail::parse_real(body.substr(6), "spike probability");
    if (!(d.zero_probability >= 0.0 && d.zero_probability <= 1.0)) {
      fail(ErrorKind::usage, "spike probability must lie in [0, 1]");
    }
  } else {
    fail(ErrorKind::usage, "unknown distribution '" + text + "' (normal, uniform, spike:<p>)");
  }
  return d;
}

/// "<name>=<d0>x<d1>...[:<dtype>]", e.g. "layer.0.weight=64x32:F16".
inline SynthTensor parse_synth_tensor(const std::string& text) {
  const auto eq = text.rfind('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorKind::usage, "tensor spec '" + text + "' needs <name>=<shape>");
  SynthTensor t;
  t.name = text.substr(0, eq);
  std::string dims = text.substr(eq + 1);
  if (const auto colon = dims.find(':'); colon != std::string::npos) {
    const auto dt = parse_dtype(dims.substr(colon + 1));
    if (!dt) fail(ErrorKind::usage, "unknown dtype in tensor spec '" + text + "'");
    t.dtype = *dt;
    dims.resize(colon);
  }
  std::size_t pos = 0;
  while (pos <= dims.size()) {
    const auto x = std::min(dims.find('x', pos), dims.size());
    const std::string part = dims.substr(pos, x - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      fail(ErrorKind::usage, "invalid shape in tensor spec '" + text + "'");
    }
    const auto d = std::stoull(part);
    if (d == 0) fail(ErrorKind::usage, "zero dimension in tensor spec '" + text + "'");
    t.shape.push_back(d);
    pos = x + 1;
  }
  return t;
}

/// Seeded pseudo-random tensors, generated in name order from a single
/// mt19937_64 stream so equal specs give byte-identical containers.
inline std::vector<TensorPayload> synth_payloads(const SynthSpec& spec) {
  if (spec.tensors.empty()) fail(ErrorKind::usage, "synth needs at least one tensor");
  auto tensors = spec.tensors;
  std::sort(tensors.begin(), tensors.end(),
            [](const SynthTensor& a, const SynthTensor& b) { return a.name < b.name; });

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, spec.distribution.scale);
  std::uniform_real_distribution<double> uniform(-spec.distribution.scale, spec.distribution.scale);
  std::bernoulli_distribution spike(spec.distribution.zero_probability);

  std::vector<TensorPayload> out;
  for (const auto& t : tensors) {
    std::vector<double> values(element_count(t.shape));
    for (double& v : values) {
      switch (spec.distribution.kind) {
        case Distribution::Kind::normal:
          v = normal(rng);
          break;
        case Distribution::Kind::uniform:
          v = uniform(rng);
          break;
        case Distribution::Kind::spike_at_zero:
          v = spike(rng) ? 0.0 : normal(rng);
          break;
      }
    }
    out.push_back(make_payload(t.name, t.dtype, t.shape, values));
  }
  return out;
}

inline void synth(const SynthSpec& spec, const std::string& path) {
  write_container(path, synth_payloads(spec));
}

}  // namespace sparsekit
