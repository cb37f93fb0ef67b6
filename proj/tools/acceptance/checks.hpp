#pragma once

#include <sstream>
#include <string>

namespace omnistereo::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Env {
  /// Reports and scratch runs go here.
  std::string out_dir;
};

/// Collects failed sub-checks and a short summary.
class Verdict {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failures_ << (failures_.tellp() > 0 ? "; " : "") << what;
    }
  }
  void note(const std::string& s) { notes_ << (notes_.tellp() > 0 ? ", " : "") << s; }
  Outcome finish() const {
    std::string d = notes_.str();
    if (!pass_) d += (d.empty() ? "" : " | ") + std::string("failed: ") + failures_.str();
    return {pass_, d};
  }

 private:
  bool pass_ = true;
  std::ostringstream notes_, failures_;
};

std::string fmt(double v, int precision = 3);

Outcome geometry_oracles(const Env& env);
Outcome loss_oracles(const Env& env);
Outcome metric_oracles(const Env& env);
Outcome cost_volume_oracles(const Env& env);
Outcome photometric_consistency(const Env& env);
Outcome freeze_contracts(const Env& env);
Outcome overfit(const Env& env);
Outcome stage_ordering(const Env& env);
Outcome ratio_sweep(const Env& env);
Outcome determinism(const Env& env);

}  // namespace omnistereo::acceptance
