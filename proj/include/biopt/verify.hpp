#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biopt/presets.hpp"

namespace biopt {

struct VerifyOptions {
  uint64_t seed = 1;
  /* test hook: perturbs the quadratic lower w-gradient so the matching
     check row fails by name; used to prove the sweep can catch a bad
     gradient rather than vacuously passing */
  bool corrupt_gradient = false;
};

/* Finite-difference sweeps over every built-in problem family plus the
   generic invariants (softmax algebra, block-draw uniformity, byte-identical
   rerun artifacts).  Returns one row per invariant; determinism artifacts
   are written under out_dir. */
std::vector<Verdict> verification_sweep(const VerifyOptions& options,
                                        const std::string& out_dir);

}  // namespace biopt
