#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "model.hpp"
#include "pruning.hpp"

namespace fedlp {

struct ClientState {
  std::size_t id = 0;
  std::vector<std::size_t> data_indices;
  LayeredModel model;
  std::variant<LprConfig, HeteroAssignment> scheme_state;

  bool hetero() const noexcept { return std::holds_alternative<HeteroAssignment>(scheme_state); }

  /// Number of shared layers this client trains, uploads at most, and downloads.
  std::size_t shared_layers() const {
    if (const auto* h = std::get_if<HeteroAssignment>(&scheme_state)) return h->layer_count;
    return model.num_prunable();
  }
};

}  // namespace fedlp
