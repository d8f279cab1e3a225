#pragma once

#include <string>
#include <vector>

#include "toivsf/tensor.hpp"

namespace toivsf {

struct SuiteRow {
    std::string op;
    real max_rel_error = 0;
    std::size_t cases = 0;
    std::size_t coords = 0;
    std::size_t kinks = 0;  // coordinates skipped at a non-differentiable point
    bool passed = false;
};

// Engine ops plus the composed imputer and forecaster graphs.
const std::vector<std::string>& gradient_suite_ops();

// Checks each named op against central differences on `cases` random
// shapes derived from `seed`. Unknown names raise ConfigError.
std::vector<SuiteRow> run_gradient_suite(std::uint64_t seed, const std::vector<std::string>& ops,
                                         real tolerance = real(1e-4), std::size_t cases = 5);

}  // namespace toivsf
