#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <vector>

#include <CLI11.hpp>

#include "checks.hpp"

using namespace omnistereo::acceptance;

namespace {

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome(const Env&)> run;
};

}  // namespace

namespace omnistereo::acceptance {

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

}  // namespace omnistereo::acceptance

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::vector<int> only;
  Env env{"acceptance_out"};
  app.add_option("--only", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--out", env.out_dir, "Directory for reports and scratch runs");
  CLI11_PARSE(app, argc, argv);
  std::filesystem::create_directories(env.out_dir);

  const std::vector<Criterion> all = {
      {1, "geometry oracles", 10, geometry_oracles},
      {2, "loss oracles", 30, loss_oracles},
      {3, "metric oracles", 10, metric_oracles},
      {4, "cost volume oracles", 10, cost_volume_oracles},
      {5, "photometric consistency", 60, photometric_consistency},
      {6, "freeze contracts", 120, freeze_contracts},
      {7, "end-to-end overfit", 3600, overfit},
      {8, "two-stage ordering", 2700, stage_ordering},
      {9, "subset ratio sweep", 4 * 3600, ratio_sweep},
      {10, "determinism", 600, determinism},
  };

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(env);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += " | over the " + fmt(c.budget_s, 4) + " s budget";
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << ", " << fmt(secs, 3)
              << " s): " << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
