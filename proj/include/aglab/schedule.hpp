#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace aglab {

enum class ScheduleKind { Cosine, LinearBeta };

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "cosine") return ScheduleKind::Cosine;
  if (s == "linear-beta") return ScheduleKind::LinearBeta;
  throw std::invalid_argument("unknown schedule kind '" + s + "' (expected: cosine|linear-beta)");
}

// Discrete noise schedule over indices t = 0..T. alpha_bar (signal^2) is 1
// near t=0 and close to 0 at t=T; a run executes T steps from t=T down to
// t=1, landing on the clean state at t=0.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;  // size T+1

  double a_bar(int t) const { return alpha_bar[static_cast<std::size_t>(t)]; }
  double alpha(int t) const { return std::sqrt(a_bar(t)); }
  double sigma(int t) const { return std::sqrt(1.0 - a_bar(t)); }

  static NoiseSchedule from_alpha_bar(std::vector<double> ab) {
    NoiseSchedule s;
    s.T = static_cast<int>(ab.size()) - 1;
    s.alpha_bar = std::move(ab);
    s.validate();
    return s;
  }

  static NoiseSchedule make(ScheduleKind kind, int T) {
    if (T < 2) throw std::invalid_argument("schedule: T must be >= 2, got " + std::to_string(T));
    std::vector<double> ab(static_cast<std::size_t>(T) + 1);
    if (kind == ScheduleKind::Cosine) {
      // squared-cosine signal curve with small offset; beta clamped at the
      // terminal index so alpha_bar stays strictly positive
      auto f = [T](int i) {
        double u = (static_cast<double>(i) / T + 0.008) / 1.008;
        double c = std::cos(u * 1.5707963267948966);
        return c * c;
      };
      double f0 = f(0);
      ab[0] = 1.0;
      for (int i = 1; i <= T; ++i) {
        double beta = 1.0 - f(i) / f(i - 1);
        if (beta > 0.999) beta = 0.999;
        ab[static_cast<std::size_t>(i)] = ab[static_cast<std::size_t>(i - 1)] * (1.0 - beta);
      }
      (void)f0;
    } else {
      // classic 1000-step linear-beta ramp, subsampled to T indices so that
      // different T share one underlying noise curve
      const int base = 1000;
      std::vector<double> base_ab(base + 1);
      base_ab[0] = 1.0;
      for (int j = 1; j <= base; ++j) {
        double beta = 1e-4 + (0.02 - 1e-4) * (j - 1) / (base - 1.0);
        base_ab[static_cast<std::size_t>(j)] = base_ab[static_cast<std::size_t>(j - 1)] * (1.0 - beta);
      }
      for (int i = 0; i <= T; ++i) {
        int j = static_cast<int>(std::llround(static_cast<double>(i) * base / T));
        ab[static_cast<std::size_t>(i)] = base_ab[static_cast<std::size_t>(j)];
      }
    }
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar = std::move(ab);
    s.validate();
    return s;
  }

  void validate() const {
    if (T < 2) throw std::invalid_argument("schedule: T must be >= 2, got " + std::to_string(T));
    if (alpha_bar.size() != static_cast<std::size_t>(T) + 1)
      throw std::invalid_argument("schedule: alpha_bar must have T+1 entries");
    for (int i = 0; i <= T; ++i) {
      double a = alpha_bar[static_cast<std::size_t>(i)];
      if (!(a > 0.0) || a > 1.0) throw std::invalid_argument("schedule: alpha_bar out of (0,1] at t=" + std::to_string(i));
      if (i > 0 && a >= alpha_bar[static_cast<std::size_t>(i - 1)])
        throw std::invalid_argument("schedule: alpha_bar must strictly decrease with t (violated at t=" + std::to_string(i) + ")");
    }
  }
};

}  // namespace aglab
