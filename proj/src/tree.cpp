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

#include "firp/tree.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "firp/errors.hpp"
#include "firp/tensor_ops.hpp"

namespace firp {

int TreeTemplate::max_step() const {
  int m = 0;
  for (const auto& n : nodes) m = std::max(m, n.step);
  return m;
}

void TreeTemplate::validate() const {
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < size(); ++i) {
    const auto& n = nodes[i];
    const std::string where = "tree node " + std::to_string(i);
    if (n.rank < 1) throw TemplateError(where + ": rank must be >= 1");
    if (n.step < 1) throw TemplateError(where + ": step must be >= 1");
    if (n.parent == kRootParent) {
      if (n.step != 1) throw TemplateError(where + ": children of the root must have step 1");
    } else {
      if (n.parent < 0 || n.parent >= size()) throw TemplateError(where + ": parent index out of range");
      if (nodes[n.parent].step != n.step - 1) throw TemplateError(where + ": parent step must be step - 1");
    }
    if (!seen.emplace(n.parent, n.rank).second) {
      throw TemplateError(where + ": duplicate rank " + std::to_string(n.rank) + " under the same parent");
    }
  }
  for (int i = 0; i < size(); ++i) ancestors(i);
}

std::vector<int> TreeTemplate::ancestors(int node) const {
  std::vector<int> out;
  int cur = nodes.at(node).parent;
  while (cur != kRootParent) {
    if (cur < 0 || cur >= size()) throw TemplateError("tree node " + std::to_string(node) + ": dangling parent");
    if (static_cast<int>(out.size()) >= size()) {
      throw TemplateError("tree node " + std::to_string(node) + ": cyclic parent links");
    }
    out.push_back(cur);
    cur = nodes[cur].parent;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<int> TreeTemplate::children(int parent) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (nodes[i].parent == parent) out.push_back(i);
  return out;
}

std::vector<int> TreeTemplate::topological_order() const {
  std::vector<int> order(nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return nodes[a].step < nodes[b].step; });
  return order;
}

TreeTemplate TreeTemplate::truncated(int max_step) const {
  std::vector<int> remap(nodes.size(), -1);
  TreeTemplate out;
  for (int i = 0; i < size(); ++i) {
    if (nodes[i].step > max_step) continue;
    remap[i] = out.size();
    out.nodes.push_back(nodes[i]);
  }
  for (auto& n : out.nodes)
    if (n.parent != kRootParent) n.parent = remap.at(n.parent);
  return out;
}

TreeTemplate TreeTemplate::chain(int depth) {
  TreeTemplate t;
  for (int s = 1; s <= depth; ++s) t.nodes.push_back({s, 1, s == 1 ? kRootParent : s - 2});
  return t;
}

TreeTemplate TreeTemplate::full(int depth, int width) {
  TreeTemplate t;
  std::vector<int> frontier{kRootParent};
  for (int s = 1; s <= depth; ++s) {
    std::vector<int> next;
    for (int p : frontier) {
      for (int r = 1; r <= width; ++r) {
        next.push_back(t.size());
        t.nodes.push_back({s, r, p});
      }
    }
    frontier = std::move(next);
  }
  return t;
}

nlohmann::json TreeTemplate::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& n : nodes) arr.push_back({{"step", n.step}, {"rank", n.rank}, {"parent", n.parent}});
  return {{"nodes", arr}};
}

TreeTemplate TreeTemplate::from_json(const nlohmann::json& j) {
  TreeTemplate t;
  try {
    for (const auto& n : j.at("nodes")) {
      TreeNode node;
      node.step = n.at("step").get<int>();
      node.rank = n.at("rank").get<int>();
      const auto& p = n.at("parent");
      node.parent = p.is_null() ? kRootParent : p.get<int>();
      t.nodes.push_back(node);
    }
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError(std::string("malformed tree template: ") + e.what());
  }
  t.validate();
  return t;
}

BoolMatrix tree_attention_mask(const TreeTemplate& tmpl, int prefix_len) {
  const int n = tmpl.size();
  BoolMatrix m(n, prefix_len + n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < prefix_len; ++c) m.set(i, c, true);
    for (int a : tmpl.ancestors(i)) m.set(i, prefix_len + a, true);
    m.set(i, prefix_len + i, true);
  }
  return m;
}

DraftTree instantiate_tree(const TreeTemplate& tmpl, const Tensor& distributions) {
  const int steps = distributions.rows(), vocab = distributions.cols();
  std::vector<std::vector<int>> ranked(static_cast<std::size_t>(steps));
  DraftTree tree{tmpl, std::vector<int>(tmpl.nodes.size())};
  for (int i = 0; i < tmpl.size(); ++i) {
    const auto& n = tmpl.nodes[i];
    if (n.step > steps) {
      throw TemplateError("tree node " + std::to_string(i) + " needs step " + std::to_string(n.step) + " but only " +
                          std::to_string(steps) + " draft distributions exist");
    }
    if (n.rank > vocab) {
      throw TemplateError("tree node " + std::to_string(i) + " asks for rank " + std::to_string(n.rank) +
                          " of a " + std::to_string(vocab) + "-token vocabulary");
    }
    auto& order = ranked[n.step - 1];
    if (order.empty()) order = rank_order(distributions.row(n.step - 1));
    tree.tokens[i] = order[n.rank - 1];
  }
  return tree;
}

TreeBatch build_tree_batch(const DraftTree& tree, int root_token, int cache_len) {
  const auto& tmpl = tree.tmpl;
  const int n = tmpl.size();
  TreeBatch b;
  b.cache_len = cache_len;
  b.tokens.push_back(root_token);
  b.position_ids.push_back(cache_len);
  b.row_node.push_back(kRootParent);
  b.parent_row.push_back(-1);
  std::vector<int> node_row(tmpl.nodes.size(), -1);
  for (int v : tmpl.topological_order()) {
    node_row[v] = static_cast<int>(b.tokens.size());
    b.tokens.push_back(tree.tokens[v]);
    b.position_ids.push_back(cache_len + tmpl.nodes[v].step);
    b.row_node.push_back(v);
    const int p = tmpl.nodes[v].parent;
    b.parent_row.push_back(p == kRootParent ? 0 : node_row[p]);
  }
  const int rows = n + 1;
  b.mask = BoolMatrix(rows, cache_len + rows);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cache_len; ++c) b.mask.set(r, c, true);
    for (int a = r; a != -1; a = b.parent_row[a]) b.mask.set(r, cache_len + a, true);
  }
  return b;
}

}  // namespace firp
