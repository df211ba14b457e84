#include "ghnsearch/arch.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <sstream>

#include "ghnsearch/rng.hpp"
#include "json.hpp"

namespace ghn {

using nlohmann::json;

const std::vector<OpKind>& space_ops(SearchSpace space) {
  static const std::vector<OpKind> standard = {
      OpKind::kIdentity,      OpKind::kConv1x1,       OpKind::kSepConv3x3,
      OpKind::kSepConv5x5,    OpKind::kDilSepConv3x3, OpKind::kDilSepConv5x5,
      OpKind::kConv1x7_7x1,   OpKind::kMaxPool3x3,    OpKind::kAvgPool3x3};
  static const std::vector<OpKind> anytime = {OpKind::kConv1x1, OpKind::kConv3x3,
                                              OpKind::kConv5x5, OpKind::kMaxPool3x3,
                                              OpKind::kAvgPool3x3};
  return space == SearchSpace::kStandard ? standard : anytime;
}

std::string op_name(OpKind op) {
  switch (op) {
    case OpKind::kIdentity: return "identity";
    case OpKind::kConv1x1: return "conv1x1";
    case OpKind::kSepConv3x3: return "sep_conv3x3";
    case OpKind::kSepConv5x5: return "sep_conv5x5";
    case OpKind::kDilSepConv3x3: return "dil_sep_conv3x3";
    case OpKind::kDilSepConv5x5: return "dil_sep_conv5x5";
    case OpKind::kConv1x7_7x1: return "conv1x7_7x1";
    case OpKind::kMaxPool3x3: return "max_pool3x3";
    case OpKind::kAvgPool3x3: return "avg_pool3x3";
    case OpKind::kConv3x3: return "conv3x3";
    case OpKind::kConv5x5: return "conv5x5";
  }
  throw InputError("unknown op kind");
}

OpKind op_from_name(const std::string& name) {
  static const std::map<std::string, OpKind> table = {
      {"identity", OpKind::kIdentity},
      {"conv1x1", OpKind::kConv1x1},
      {"sep_conv3x3", OpKind::kSepConv3x3},
      {"sep_conv5x5", OpKind::kSepConv5x5},
      {"dil_sep_conv3x3", OpKind::kDilSepConv3x3},
      {"dil_sep_conv5x5", OpKind::kDilSepConv5x5},
      {"conv1x7_7x1", OpKind::kConv1x7_7x1},
      {"max_pool3x3", OpKind::kMaxPool3x3},
      {"avg_pool3x3", OpKind::kAvgPool3x3},
      {"conv3x3", OpKind::kConv3x3},
      {"conv5x5", OpKind::kConv5x5},
  };
  auto it = table.find(name);
  if (it == table.end()) throw ParseError("unknown operator name \"" + name + "\"");
  return it->second;
}

bool op_has_params(OpKind op) {
  switch (op) {
    case OpKind::kIdentity:
    case OpKind::kMaxPool3x3:
    case OpKind::kAvgPool3x3:
      return false;
    default:
      return true;
  }
}

int op_kernel_extent(OpKind op) {
  switch (op) {
    case OpKind::kIdentity: return 0;
    case OpKind::kConv1x1: return 1;
    case OpKind::kSepConv3x3:
    case OpKind::kDilSepConv3x3:
    case OpKind::kConv3x3:
    case OpKind::kMaxPool3x3:
    case OpKind::kAvgPool3x3:
      return 3;
    case OpKind::kSepConv5x5:
    case OpKind::kDilSepConv5x5:
    case OpKind::kConv5x5:
      return 5;
    case OpKind::kConv1x7_7x1:
      return 7;
  }
  throw InputError("unknown op kind");
}

std::string scale_name(Scale s) {
  switch (s) {
    case Scale::kFull: return "full";
    case Scale::kHalf: return "half";
    case Scale::kQuarter: return "quarter";
  }
  throw InputError("unknown scale");
}

Scale scale_from_name(const std::string& name) {
  if (name == "full") return Scale::kFull;
  if (name == "half") return Scale::kHalf;
  if (name == "quarter") return Scale::kQuarter;
  throw ParseError("unknown scale name \"" + name + "\"");
}

const ArchNode& ArchGraph::node(int id) const {
  for (const ArchNode& n : nodes) {
    if (n.id == id) return n;
  }
  throw GraphError("no node with id " + std::to_string(id));
}

bool ArchGraph::is_input(int id) const {
  return std::find(input_ids.begin(), input_ids.end(), id) != input_ids.end();
}

std::vector<int> ArchGraph::in_neighbors(int id) const {
  std::vector<int> result;
  for (const auto& [src, dst] : edges) {
    if (dst == id) result.push_back(src);
  }
  return result;
}

std::vector<int> ArchGraph::leaf_ids() const {
  std::vector<int> result;
  for (const ArchNode& n : nodes) {
    bool has_out = false;
    for (const auto& [src, dst] : edges) {
      if (src == n.id) {
        has_out = true;
        break;
      }
    }
    if (!has_out) result.push_back(n.id);
  }
  std::sort(result.begin(), result.end());
  return result;
}

ArchGraph sample_block(SearchSpace space, int n_nodes, uint64_t seed, const SampleOptions& opts) {
  if (n_nodes < 1) throw InputError("sample_block: n_nodes must be >= 1");
  if (opts.allowed_scales.empty()) throw InputError("sample_block: empty scale set");

  Rng rng = Rng::derive(seed, 0xa5c);
  const auto& ops = space_ops(space);
  const bool anytime = space == SearchSpace::kAnytime;

  ArchGraph g;
  g.mode = anytime ? GraphMode::kAnytime : GraphMode::kStandard;
  g.join = anytime ? JoinRule::kConcat : JoinRule::kSum;

  const int n_inputs = anytime ? 1 : 2;
  for (int i = 0; i < n_inputs; ++i) {
    ArchNode input;
    input.id = i;
    input.op = OpKind::kConv1x1;  // input nodes are bottleneck projections
    if (anytime) {
      input.anytime = AnytimeAttrs{
          opts.allowed_scales[rng.next_below(opts.allowed_scales.size())], false};
    }
    g.nodes.push_back(input);
    g.input_ids.push_back(i);
  }

  for (int k = 0; k < n_nodes; ++k) {
    ArchNode node;
    node.id = n_inputs + k;
    node.op = ops[rng.next_below(ops.size())];
    if (anytime) {
      node.anytime = AnytimeAttrs{
          opts.allowed_scales[rng.next_below(opts.allowed_scales.size())], false};
    }
    // 1-2 distinct predecessors among all earlier nodes.
    const int available = n_inputs + k;
    int fan_in = 1 + static_cast<int>(rng.next_below(2));
    fan_in = std::min(fan_in, available);
    int first = static_cast<int>(rng.next_below(static_cast<uint64_t>(available)));
    std::vector<int> preds = {first};
    if (fan_in == 2) {
      int second = static_cast<int>(rng.next_below(static_cast<uint64_t>(available - 1)));
      if (second >= first) ++second;
      preds.push_back(second);
    }
    std::sort(preds.begin(), preds.end());
    for (int p : preds) g.edges.emplace_back(p, node.id);
    g.nodes.push_back(node);
  }

  if (anytime && opts.exit_count > 0) {
    // Flag exit_count distinct op nodes (never the input node).
    const int exits = std::min(opts.exit_count, n_nodes);
    std::vector<int> order = rng.permutation(n_nodes);
    for (int i = 0; i < exits; ++i) {
      g.nodes[static_cast<size_t>(n_inputs + order[static_cast<size_t>(i)])].anytime->early_exit =
          true;
    }
  }
  return g;
}

std::vector<int> topological_sort(const ArchGraph& g) {
  std::map<int, int> in_degree;
  for (const ArchNode& n : g.nodes) in_degree[n.id] = 0;
  for (const auto& [src, dst] : g.edges) {
    if (!in_degree.count(src) || !in_degree.count(dst)) {
      throw GraphError("edge (" + std::to_string(src) + "," + std::to_string(dst) +
                       ") references unknown node");
    }
    in_degree[dst] += 1;
  }
  std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
  for (const auto& [id, deg] : in_degree) {
    if (deg == 0) ready.push(id);
  }
  std::vector<int> order;
  while (!ready.empty()) {
    int id = ready.top();
    ready.pop();
    order.push_back(id);
    for (const auto& [src, dst] : g.edges) {
      if (src == id && --in_degree[dst] == 0) ready.push(dst);
    }
  }
  if (order.size() != g.nodes.size()) {
    // Walk the leftover nodes to produce a concrete cycle witness.
    std::vector<int> leftover;
    for (const auto& [id, deg] : in_degree) {
      if (deg > 0) leftover.push_back(id);
    }
    std::vector<int> path;
    std::map<int, int> pos;
    int cur = leftover.front();
    while (!pos.count(cur)) {
      pos[cur] = static_cast<int>(path.size());
      path.push_back(cur);
      for (const auto& [src, dst] : g.edges) {
        if (dst == cur &&
            std::find(leftover.begin(), leftover.end(), src) != leftover.end()) {
          cur = src;
          break;
        }
      }
    }
    std::ostringstream os;
    os << "cycle detected: ";
    for (size_t i = static_cast<size_t>(pos[cur]); i < path.size(); ++i) os << path[i] << " <- ";
    os << cur;
    throw GraphError(os.str());
  }
  return order;
}

std::vector<std::string> validate(const ArchGraph& g, std::optional<int> anytime_block_pos) {
  std::vector<std::string> violations;
  const bool anytime = g.mode == GraphMode::kAnytime;

  if (g.nodes.empty()) {
    violations.push_back("graph has no nodes");
    return violations;
  }

  std::map<int, int> seen;
  for (const ArchNode& n : g.nodes) {
    if (seen.count(n.id)) violations.push_back("duplicate node id " + std::to_string(n.id));
    seen[n.id] = 1;
    if (n.anytime.has_value() != anytime) {
      violations.push_back("node " + std::to_string(n.id) +
                           (anytime ? " missing anytime attributes" : " carries anytime attributes"));
    }
    const auto& ops = space_ops(anytime ? SearchSpace::kAnytime : SearchSpace::kStandard);
    if (std::find(ops.begin(), ops.end(), n.op) == ops.end()) {
      violations.push_back("node " + std::to_string(n.id) + " op " + op_name(n.op) +
                           " not in space");
    }
  }

  if (anytime && g.join != JoinRule::kConcat) violations.push_back("anytime mode requires concat join");
  if (!anytime && g.join != JoinRule::kSum) violations.push_back("standard mode requires sum join");

  const size_t expect_inputs = anytime ? 1 : 2;
  if (g.input_ids.size() != expect_inputs) {
    violations.push_back("expected " + std::to_string(expect_inputs) + " input nodes, found " +
                         std::to_string(g.input_ids.size()));
  }
  for (int id : g.input_ids) {
    if (!seen.count(id)) violations.push_back("input id " + std::to_string(id) + " not a node");
  }

  for (const auto& [src, dst] : g.edges) {
    if (!seen.count(src) || !seen.count(dst)) {
      violations.push_back("edge (" + std::to_string(src) + "," + std::to_string(dst) +
                           ") references unknown node");
      return violations;
    }
  }

  for (const ArchNode& n : g.nodes) {
    const bool input = g.is_input(n.id);
    const size_t fan_in = g.in_neighbors(n.id).size();
    if (input && fan_in > 0) {
      violations.push_back("input node " + std::to_string(n.id) + " has incoming edges");
    }
    if (!input && fan_in == 0) {
      violations.push_back("orphan node " + std::to_string(n.id));
    }
  }

  try {
    topological_sort(g);
  } catch (const GraphError& e) {
    violations.push_back(e.what());
    return violations;
  }

  // Reachability from the input nodes.
  std::vector<int> frontier = g.input_ids;
  std::set<int> reached(frontier.begin(), frontier.end());
  while (!frontier.empty()) {
    int id = frontier.back();
    frontier.pop_back();
    for (const auto& [src, dst] : g.edges) {
      if (src == id && !reached.count(dst)) {
        reached.insert(dst);
        frontier.push_back(dst);
      }
    }
  }
  for (const ArchNode& n : g.nodes) {
    if (!reached.count(n.id)) {
      violations.push_back("node " + std::to_string(n.id) + " unreachable from inputs");
    }
  }

  if (anytime && anytime_block_pos.has_value()) {
    const int pos = *anytime_block_pos;
    for (const ArchNode& n : g.nodes) {
      if (!n.anytime) continue;
      const int divisor = static_cast<int>(n.anytime->scale);
      // Block 1 allows any scale; block 2 half or coarser; block 3+ quarter only.
      const int min_divisor = pos <= 1 ? 1 : (pos == 2 ? 2 : 4);
      if (divisor < min_divisor) {
        violations.push_back("node " + std::to_string(n.id) + " scale " +
                             scale_name(n.anytime->scale) + " not allowed in block " +
                             std::to_string(pos));
      }
    }
  }
  return violations;
}

namespace {
json node_to_json(const ArchNode& n, GraphMode mode) {
  json j;
  j["id"] = n.id;
  j["op"] = op_name(n.op);
  if (mode == GraphMode::kAnytime && n.anytime) {
    j["scale"] = scale_name(n.anytime->scale);
    j["early_exit"] = n.anytime->early_exit;
  }
  return j;
}
}  // namespace

std::string serialize(const ArchGraph& g) {
  json j;
  j["schema"] = "ghn-arch/1";
  j["mode"] = g.mode == GraphMode::kAnytime ? "anytime" : "standard";
  j["join"] = g.join == JoinRule::kConcat ? "concat" : "sum";
  j["inputs"] = g.input_ids;
  j["nodes"] = json::array();
  for (const ArchNode& n : g.nodes) j["nodes"].push_back(node_to_json(n, g.mode));
  j["edges"] = json::array();
  for (const auto& [src, dst] : g.edges) j["edges"].push_back(json::array({src, dst}));
  return j.dump();
}

ArchGraph deserialize(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed architecture JSON: ") + e.what());
  }
  try {
    if (!j.contains("schema") || j.at("schema").get<std::string>() != "ghn-arch/1") {
      throw ParseError("architecture schema mismatch: expected \"ghn-arch/1\", got \"" +
                       (j.contains("schema") ? j.at("schema").dump() : std::string("<missing>")) +
                       "\"");
    }
    ArchGraph g;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "standard") {
      g.mode = GraphMode::kStandard;
    } else if (mode == "anytime") {
      g.mode = GraphMode::kAnytime;
    } else {
      throw ParseError("unknown mode \"" + mode + "\"");
    }
    const std::string join = j.at("join").get<std::string>();
    if (join == "sum") {
      g.join = JoinRule::kSum;
    } else if (join == "concat") {
      g.join = JoinRule::kConcat;
    } else {
      throw ParseError("unknown join \"" + join + "\"");
    }
    g.input_ids = j.at("inputs").get<std::vector<int>>();
    for (const json& nj : j.at("nodes")) {
      ArchNode n;
      n.id = nj.at("id").get<int>();
      n.op = op_from_name(nj.at("op").get<std::string>());
      if (g.mode == GraphMode::kAnytime) {
        AnytimeAttrs a;
        a.scale = scale_from_name(nj.at("scale").get<std::string>());
        a.early_exit = nj.at("early_exit").get<bool>();
        n.anytime = a;
      }
      g.nodes.push_back(n);
    }
    for (const json& ej : j.at("edges")) {
      if (!ej.is_array() || ej.size() != 2) throw ParseError("edge entries must be [src,dst]");
      g.edges.emplace_back(ej[0].get<int>(), ej[1].get<int>());
    }
    return g;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid architecture JSON: ") + e.what());
  }
}

std::string graph_hash(const ArchGraph& g) {
  const std::string text = serialize(g);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

NetworkSpec stack_blocks(const ArchGraph& block, int repeat, const std::set<int>& reductions,
                         int initial_channels) {
  if (repeat < 1) throw InputError("stack_blocks: repeat must be >= 1");
  if (initial_channels < 1) throw InputError("stack_blocks: initial_channels must be >= 1");
  for (int r : reductions) {
    if (r < 1 || r > repeat) {
      throw InputError("stack_blocks: reduction position " + std::to_string(r) +
                       " outside [1," + std::to_string(repeat) + "]");
    }
  }
  NetworkSpec spec;
  spec.blocks = {block};
  spec.repeat = repeat;
  spec.reductions = reductions;
  spec.initial_channels = initial_channels;
  spec.mode = block.mode;
  return spec;
}

NetworkSpec make_anytime_spec(std::vector<ArchGraph> blocks, int initial_channels) {
  if (blocks.empty()) throw InputError("make_anytime_spec: need at least one block");
  NetworkSpec spec;
  spec.repeat = static_cast<int>(blocks.size());
  spec.blocks = std::move(blocks);
  spec.initial_channels = initial_channels;
  spec.mode = GraphMode::kAnytime;
  return spec;
}

std::vector<std::string> validate_spec(const NetworkSpec& spec) {
  std::vector<std::string> violations;
  if (spec.blocks.empty()) {
    violations.push_back("spec has no blocks");
    return violations;
  }
  if (spec.mode == GraphMode::kStandard) {
    if (spec.blocks.size() != 1) violations.push_back("standard spec must hold a single motif");
    auto v = validate(spec.blocks[0]);
    violations.insert(violations.end(), v.begin(), v.end());
  } else {
    if (static_cast<int>(spec.blocks.size()) != spec.repeat) {
      violations.push_back("anytime spec needs one block per position");
    }
    for (size_t i = 0; i < spec.blocks.size(); ++i) {
      auto v = validate(spec.blocks[i], static_cast<int>(i) + 1);
      violations.insert(violations.end(), v.begin(), v.end());
    }
  }
  return violations;
}

std::vector<Scale> allowed_scales_at(int pos) {
  if (pos <= 1) return {Scale::kFull, Scale::kHalf, Scale::kQuarter};
  if (pos == 2) return {Scale::kHalf, Scale::kQuarter};
  return {Scale::kQuarter};
}

NetworkSpec sample_network_spec(const NetworkSampleOptions& opts, uint64_t seed) {
  if (opts.mode == GraphMode::kStandard) {
    const ArchGraph block = sample_block(SearchSpace::kStandard, opts.n_nodes, seed);
    return stack_blocks(block, opts.repeat, opts.reductions, opts.channels);
  }
  std::vector<ArchGraph> blocks;
  for (size_t p = 1; p <= opts.anytime_sizes.size(); ++p) {
    SampleOptions so;
    so.allowed_scales = allowed_scales_at(static_cast<int>(p));
    so.exit_count = opts.exits_per_block;
    blocks.push_back(sample_block(SearchSpace::kAnytime, opts.anytime_sizes[p - 1],
                                  Rng::derive(seed, 0xb10c, p).next_u64(), so));
  }
  return make_anytime_spec(std::move(blocks), opts.channels);
}

std::vector<int> channel_progression(const NetworkSpec& spec) {
  std::vector<int> widths;
  int width = spec.initial_channels;
  for (int p = 1; p <= spec.repeat; ++p) {
    // Channels double (and spatial halves) after each reduction position.
    if (spec.reductions.count(p - 1)) width *= 2;
    widths.push_back(width);
  }
  return widths;
}

}  // namespace ghn
