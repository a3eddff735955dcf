// SPDX-License-Identifier: Apache-2.0
//
// Built-in oracle suite behind the `verify` command: quick gradient checks,
// loop oracles, identity-at-init and persistence round-trips, each reported
// as one named pass/fail row.
#pragma once

#include <string>
#include <vector>

namespace dvit {

struct CheckResult {
  std::string name;
  bool ok = false;
  std::string detail;  // one-line diagnostic, empty when passing
};

std::vector<CheckResult> run_selfchecks();

}  // namespace dvit
