#pragma once

// Reduced configs that run every subcommand in about a second.

#include <map>
#include <string>

namespace cascadelab::testing {

inline const std::map<std::string, std::string>& small_configs() {
  static const std::map<std::string, std::string> configs = {
      {"simulate", R"({"seed": 3, "simulate": {"n": 200, "k2": 5, "trials": 500, "k1_values": [20, 50, 200],
                       "variants": [{"sigma1": 0.8, "sigma2": 0.3}, {"sigma1": 0.4, "sigma2": 0.2}]}})"},
      {"gen-data", R"({"seed": 3, "gen_data": {"pool": {"num_candidates": 2000}, "requests": 3,
                       "stage_sizes": [200, 20]}})"},
      {"train", R"({"seed": 3, "train": {"data": {"pool": {"num_candidates": 2000}, "requests": 4,
                    "stage_sizes": [400, 100]}, "features": [0, 1, 2, 3, 4, 5],
                    "arch": {"kind": "feedforward", "hidden_sizes": [4], "activation": "tanh"},
                    "train": {"epochs": 5, "batch_size": 32}}})"},
      {"distill", R"({"seed": 3, "distill": {"pool": {"num_candidates": 3000}, "requests": 4,
                      "stage_sizes": [600, 150], "teacher_train": {"epochs": 5}, "student_train": {"epochs": 5}}})"},
      {"ssfs", R"({"seed": 3, "ssfs": {"pool": {"num_candidates": 2000}, "requests": 2, "stage_sizes": [500, 50],
                   "teacher_train": {"epochs": 5}, "student_train": {"epochs": 5}, "importance_batches": 4,
                   "importance_batch_size": 64, "planted_permutations": 2}})"},
      {"sslfm", R"({"seed": 3, "sslfm": {"pool": {"num_candidates": 2000}, "requests": 2, "teacher_requests": 2,
                    "stage_sizes": [600, 150], "teacher_train": {"epochs": 3}, "student_train": {"epochs": 3}}})"},
  };
  return configs;
}

}  // namespace cascadelab::testing
