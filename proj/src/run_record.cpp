#include "biopt/run_record.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace biopt {

void RunRecord::write_csv(const std::string& path, bool deterministic_elapsed) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("RunRecord: cannot open " + path);
  if (rows.empty()) throw std::runtime_error("RunRecord: no rows to write");

  const int dl = static_cast<int>(rows.front().lambda.size());
  const int dp = static_cast<int>(rows.front().p.size());
  f << "step";
  for (int i = 0; i < dl; ++i) f << ",lambda_" << i;
  for (int i = 0; i < dp; ++i) f << ",p_" << i;
  f << ",loss_val,loss_trn,lambda_update_norm,elapsed_seconds\n";

  char buf[40];
  const auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    f << ',' << buf;
  };
  for (const auto& r : rows) {
    if (r.lambda.size() != dl || r.p.size() != dp)
      throw std::runtime_error("RunRecord: ragged rows");
    f << r.step;
    for (int i = 0; i < dl; ++i) put(r.lambda[i]);
    for (int i = 0; i < dp; ++i) put(r.p[i]);
    put(r.loss_val);
    put(r.loss_trn);
    put(r.lambda_update_norm);
    put(deterministic_elapsed ? 0.0 : r.elapsed_seconds);
    f << "\n";
  }
}

}  // namespace biopt
