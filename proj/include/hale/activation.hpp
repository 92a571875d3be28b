#pragma once

#include <cmath>
#include <string>

#include "hale/common.hpp"

namespace hale {

// Activation family applied to the scaled squared distance c_r * d^2. The
// hardness-aware pair (Hanon, Halin) carries a soft-constraint slope beta and
// a hard cap gamma; the cap zeroes gradients of already-separated instances.
enum class Activation { Identity, Linear2x, XExpX, Arctanh2, Hanon, Halin };

struct ActivationSpec {
  Activation kind = Activation::Hanon;
  double beta = 3.0;
  double gamma = 10.0;
};

inline double default_beta(Activation kind) {
  return kind == Activation::Halin ? 10.0 : 3.0;
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Linear2x: return "linear2x";
    case Activation::XExpX: return "xexpx";
    case Activation::Arctanh2: return "arctanh2";
    case Activation::Hanon: return "hanon";
    case Activation::Halin: return "halin";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "linear2x") return Activation::Linear2x;
  if (s == "xexpx") return Activation::XExpX;
  if (s == "arctanh2") return Activation::Arctanh2;
  if (s == "hanon") return Activation::Hanon;
  if (s == "halin") return Activation::Halin;
  throw ConfigError("unknown activation: " + s);
}

// Arctanh2 has definition range (-1, 1); without a normalizing geometry the
// input must be clamped just below 1.
inline constexpr double kArctanhClamp = 1.0 - 1e-5;

inline double activate(const ActivationSpec& spec, double x) {
  if (x < 0.0) throw Error("activate: negative input " + std::to_string(x));
  switch (spec.kind) {
    case Activation::Identity:
      return x;
    case Activation::Linear2x:
      return 2.0 * x;
    case Activation::XExpX:
      return x * std::exp(x);
    case Activation::Arctanh2: {
      const double xc = std::min(x, kArctanhClamp);
      return std::log((1.0 + xc) / (1.0 - xc));
    }
    case Activation::Hanon: {
      const double y =
          1.0 / (1.0 / spec.gamma + std::exp(-spec.beta * (x - 0.5)));
      // mathematically y < gamma for all finite x, but once the exponential
      // drops below gamma's ulp the quotient rounds to gamma exactly; keep
      // the strict bound by saturating one ulp below
      return std::min(y, std::nextafter(spec.gamma, 0.0));
    }
    case Activation::Halin:
      if (x < 1.0) return 2.0 * x;
      return std::min(spec.beta * (x - 1.0) + 2.0, spec.gamma);
  }
  return 0.0;
}

// dh/dx given the already-computed value h(x). Algebraically identical to
// activate_grad but avoids the exp for Hanon and XExpX; the batched backward
// pass has h on hand from the forward row.
inline double activate_grad_from_value(const ActivationSpec& spec, double x,
                                       double h) {
  switch (spec.kind) {
    case Activation::Identity:
      return 1.0;
    case Activation::Linear2x:
      return 2.0;
    case Activation::XExpX:
      // h = x e^x, h' = e^x (1 + x)
      return x == 0.0 ? 1.0 : h * (1.0 + x) / x;
    case Activation::Arctanh2:
      if (x >= kArctanhClamp) return 0.0;
      return 2.0 / (1.0 - x * x);
    case Activation::Hanon:
      // h' = beta E / den^2 with E = 1/h - 1/gamma and den = 1/h
      return spec.beta * h * (1.0 - h / spec.gamma);
    case Activation::Halin:
      if (x < 1.0) return 2.0;
      return (spec.beta * (x - 1.0) + 2.0 < spec.gamma) ? spec.beta : 0.0;
  }
  return 0.0;
}

// dh/dx. Kinks (Halin at x=1 and at the cap, the Arctanh2 clamp) take the
// right-continuous branch.
inline double activate_grad(const ActivationSpec& spec, double x) {
  if (x < 0.0) throw Error("activate_grad: negative input");
  switch (spec.kind) {
    case Activation::Identity:
      return 1.0;
    case Activation::Linear2x:
      return 2.0;
    case Activation::XExpX:
      return std::exp(x) * (1.0 + x);
    case Activation::Arctanh2: {
      if (x >= kArctanhClamp) return 0.0;
      return 2.0 / (1.0 - x * x);
    }
    case Activation::Hanon: {
      const double e = std::exp(-spec.beta * (x - 0.5));
      const double den = 1.0 / spec.gamma + e;
      return spec.beta * e / (den * den);
    }
    case Activation::Halin:
      if (x < 1.0) return 2.0;
      return (spec.beta * (x - 1.0) + 2.0 < spec.gamma) ? spec.beta : 0.0;
  }
  return 0.0;
}

}  // namespace hale
