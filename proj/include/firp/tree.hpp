/* Copyright 2026 The firp-infer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Draft-token trees. A template fixes the shape: node (step i, rank j)
// carries the rank-j token of the step-i draft distribution and hangs off a
// node of step i-1 (or the root for i = 1). The root is the pending token
// whose successors are being drafted.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "firp/tensor.hpp"

namespace firp {

inline constexpr int kRootParent = -1;

struct TreeNode {
  int step = 1;  // 1-based depth below the root
  int rank = 1;  // 1-based candidate rank within the step distribution
  int parent = kRootParent;

  bool operator==(const TreeNode&) const = default;
};

struct TreeTemplate {
  std::vector<TreeNode> nodes;

  int size() const { return static_cast<int>(nodes.size()); }
  int max_step() const;

  // Parents in range, steps consistent with parents, (parent, rank) unique,
  // ranks >= 1. Throws TemplateError.
  void validate() const;

  // Ancestors of `node` from the root's child down, excluding the node.
  // Throws TemplateError on cyclic or dangling parent links.
  std::vector<int> ancestors(int node) const;
  std::vector<int> children(int parent) const;

  // Node indices ordered by step, ties by index; parents come first.
  std::vector<int> topological_order() const;

  // Keeps nodes with step <= max_step (closed under ancestors); parent
  // indices are remapped.
  TreeTemplate truncated(int max_step) const;

  static TreeTemplate chain(int depth);
  // Every node of step < depth gets `width` children of ranks 1..width.
  static TreeTemplate full(int depth, int width);

  nlohmann::json to_json() const;  // {"nodes": [{"step", "rank", "parent"}]}
  static TreeTemplate from_json(const nlohmann::json& j);

  bool operator==(const TreeTemplate&) const = default;
};

// [N, prefix_len + N]: a node row sees every prefix column, its ancestors
// and itself. Rows and node columns follow template order.
BoolMatrix tree_attention_mask(const TreeTemplate& tmpl, int prefix_len);

struct DraftTree {
  TreeTemplate tmpl;
  std::vector<int> tokens;  // per template node
};

// Node token = rank-th entry of rank_order(distributions[step - 1]).
// `distributions` holds one row per available step.
DraftTree instantiate_tree(const TreeTemplate& tmpl, const Tensor& distributions);

// Flattened verification input: row 0 is the root (pending token), rows
// 1..N the nodes in topological order.
struct TreeBatch {
  std::vector<int> tokens;
  std::vector<int> position_ids;  // root at cache_len, node at cache_len + step
  BoolMatrix mask;                // [1 + N, cache_len + 1 + N]
  std::vector<int> row_node;      // template index per row, kRootParent for the root
  std::vector<int> parent_row;    // row of the parent, -1 for the root
  int cache_len = 0;

  int rows() const { return static_cast<int>(tokens.size()); }
};

TreeBatch build_tree_batch(const DraftTree& tree, int root_token, int cache_len);

}  // namespace firp
