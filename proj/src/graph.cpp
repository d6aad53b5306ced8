// SPDX-License-Identifier: Apache-2.0

#include "memwall/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace memwall {

using nlohmann::json;

const char* to_string(OpKind kind) {
    switch (kind) {
        case OpKind::Conv: return "Conv";
        case OpKind::MatMul: return "MatMul";
        case OpKind::ReLU: return "ReLU";
        case OpKind::Pool: return "Pool";
        case OpKind::Reshape: return "Reshape";
        case OpKind::Transpose: return "Transpose";
        case OpKind::Gather: return "Gather";
        case OpKind::Norm: return "Norm";
        case OpKind::Add: return "Add";
        case OpKind::Other: return "Other";
    }
    return "Other";
}

const char* to_string(TensorLayout layout) {
    switch (layout) {
        case TensorLayout::RowMajorNCHW: return "RowMajorNCHW";
        case TensorLayout::Packed4: return "Packed4";
        case TensorLayout::Flat: return "Flat";
    }
    return "Flat";
}

std::optional<OpKind> op_kind_from_string(const std::string& name) {
    static const std::map<std::string, OpKind> table = {
        {"Conv", OpKind::Conv},           {"MatMul", OpKind::MatMul},
        {"ReLU", OpKind::ReLU},           {"Pool", OpKind::Pool},
        {"Reshape", OpKind::Reshape},     {"Transpose", OpKind::Transpose},
        {"Gather", OpKind::Gather},       {"Norm", OpKind::Norm},
        {"Add", OpKind::Add},             {"Other", OpKind::Other},
    };
    auto it = table.find(name);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

std::optional<TensorLayout> layout_from_string(const std::string& name) {
    if (name == "RowMajorNCHW") return TensorLayout::RowMajorNCHW;
    if (name == "Packed4") return TensorLayout::Packed4;
    if (name == "Flat") return TensorLayout::Flat;
    return std::nullopt;
}

bool default_layout_transform(OpKind kind) {
    return kind == OpKind::Reshape || kind == OpKind::Transpose || kind == OpKind::Gather;
}

DeviceProfile DeviceProfile::reference() {
    return scaled(1.0, "reference");
}

DeviceProfile DeviceProfile::scaled(double factor, std::string name) {
    DeviceProfile p;
    p.name = std::move(name);
    for (OpKind k : {OpKind::Conv, OpKind::MatMul, OpKind::ReLU, OpKind::Pool, OpKind::Reshape,
                     OpKind::Transpose, OpKind::Gather, OpKind::Norm, OpKind::Add, OpKind::Other}) {
        p.kind_scale[k] = factor;
    }
    return p;
}

double DeviceProfile::op_time_us(const OpSpec& op) const {
    auto it = kind_scale.find(op.kind);
    if (it == kind_scale.end()) {
        throw IncompleteProfileError("device profile '" + name + "' has no timing for op kind " +
                                     to_string(op.kind));
    }
    return op.base_time_us * it->second;
}

int ComputationGraph::step_of(OpId op) const {
    auto it = schedule_.find(op);
    if (it == schedule_.end()) throw SchemaError("unknown op id " + std::to_string(op));
    return it->second;
}

const OpSpec& ComputationGraph::op(OpId id) const {
    return ops.at(static_cast<std::size_t>(step_of(id)));
}

const TensorSpec& ComputationGraph::tensor(TensorId id) const {
    auto it = tensors.find(id);
    if (it == tensors.end()) throw SchemaError("unknown tensor id " + std::to_string(id));
    return it->second;
}

std::uint64_t ComputationGraph::untreated_peak_bytes() const {
    // Live interval per tensor: [first_use, last_use] in schedule steps.
    const int last_step = static_cast<int>(ops.size()) - 1;
    std::uint64_t peak = 0;
    for (std::size_t s = 0; s < ops.size(); ++s) {
        std::uint64_t live = 0;
        for (const auto& [id, t] : tensors) {
            int first = t.is_graph_input() ? 0 : step_of(t.producer);
            int last = t.is_graph_output() ? last_step : step_of(t.consumers.back());
            if (first <= static_cast<int>(s) && static_cast<int>(s) <= last) live += t.bytes;
        }
        peak = std::max(peak, live);
    }
    return peak;
}

namespace {

json require_field(const json& obj, const char* field, const std::string& ctx) {
    if (!obj.contains(field)) {
        throw SchemaError(ctx + ": missing field '" + field + "'");
    }
    return obj.at(field);
}

} // namespace

ComputationGraph load_graph(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("graph document is not valid JSON: ") + e.what());
    }

    ComputationGraph g;
    g.element_width = doc.value("element_width", 4);
    if (g.element_width <= 0) {
        throw SchemaError("element_width must be positive, got " +
                          std::to_string(g.element_width));
    }

    if (!doc.contains("tensors") || !doc.contains("ops")) {
        throw SchemaError("graph document needs top-level 'ops' and 'tensors' arrays");
    }

    for (const auto& jt : doc.at("tensors")) {
        TensorSpec t;
        t.id = require_field(jt, "id", "tensor").get<TensorId>();
        const std::string ctx = "tensor " + std::to_string(t.id);
        for (const auto& dim : require_field(jt, "shape", ctx)) {
            auto v = dim.get<std::int64_t>();
            if (v <= 0) throw SchemaError(ctx + ": non-positive shape entry " + std::to_string(v));
            t.shape.push_back(v);
        }
        if (t.shape.empty()) throw SchemaError(ctx + ": empty shape");
        std::uint64_t elems = 1;
        for (auto v : t.shape) elems *= static_cast<std::uint64_t>(v);
        t.bytes = elems * static_cast<std::uint64_t>(g.element_width);
        std::string layout = jt.value("layout", "RowMajorNCHW");
        auto parsed = layout_from_string(layout);
        if (!parsed) throw SchemaError(ctx + ": unknown layout '" + layout + "'");
        t.layout = *parsed;
        if (g.tensors.count(t.id)) throw SchemaError(ctx + ": duplicate tensor id");
        g.tensors.emplace(t.id, std::move(t));
    }

    std::vector<OpSpec> file_ops;
    std::set<OpId> op_ids;
    for (const auto& jo : doc.at("ops")) {
        OpSpec op;
        op.id = require_field(jo, "id", "op").get<OpId>();
        const std::string ctx = "op " + std::to_string(op.id);
        if (!op_ids.insert(op.id).second) throw SchemaError(ctx + ": duplicate op id");
        std::string kind = require_field(jo, "kind", ctx).get<std::string>();
        auto parsed = op_kind_from_string(kind);
        if (!parsed) throw SchemaError(ctx + ": unknown op kind '" + kind + "'");
        op.kind = *parsed;
        for (const auto& i : require_field(jo, "inputs", ctx)) op.inputs.push_back(i.get<TensorId>());
        for (const auto& o : require_field(jo, "outputs", ctx)) op.outputs.push_back(o.get<TensorId>());
        if (op.outputs.empty()) throw SchemaError(ctx + ": op produces no tensors");
        op.base_time_us = require_field(jo, "base_time_us", ctx).get<double>();
        if (op.base_time_us <= 0) {
            throw SchemaError(ctx + ": non-positive base_time_us " +
                              std::to_string(op.base_time_us));
        }
        op.is_layout_transform = jo.value("layout_transform", default_layout_transform(op.kind));
        op.crosses_processor = jo.value("crosses_processor", false);

        for (TensorId tid : op.inputs) {
            if (!g.tensors.count(tid)) {
                throw SchemaError(ctx + ": dangling tensor reference " + std::to_string(tid));
            }
        }
        for (TensorId tid : op.outputs) {
            auto it = g.tensors.find(tid);
            if (it == g.tensors.end()) {
                throw SchemaError(ctx + ": dangling tensor reference " + std::to_string(tid));
            }
            if (it->second.producer != kNoOp) {
                throw SchemaError(ctx + ": tensor " + std::to_string(tid) +
                                  " already produced by op " + std::to_string(it->second.producer));
            }
            it->second.producer = op.id;
        }
        file_ops.push_back(std::move(op));
    }

    // Kahn sort, stable on file order, so an already-valid ordering is kept.
    std::map<OpId, std::size_t> file_pos;
    for (std::size_t i = 0; i < file_ops.size(); ++i) file_pos[file_ops[i].id] = i;

    std::map<OpId, int> pending; // producing ops not yet scheduled, per op
    std::map<OpId, std::vector<OpId>> dependents;
    for (const auto& op : file_ops) {
        int deps = 0;
        for (TensorId tid : op.inputs) {
            OpId prod = g.tensors.at(tid).producer;
            if (prod != kNoOp && prod != op.id) {
                ++deps;
                dependents[prod].push_back(op.id);
            }
        }
        pending[op.id] = deps;
    }

    auto by_file_pos = [&](OpId a, OpId b) { return file_pos.at(a) > file_pos.at(b); };
    std::vector<OpId> ready;
    for (const auto& op : file_ops) {
        if (pending[op.id] == 0) ready.push_back(op.id);
    }
    std::make_heap(ready.begin(), ready.end(), by_file_pos);

    std::vector<OpSpec> ordered;
    ordered.reserve(file_ops.size());
    while (!ready.empty()) {
        std::pop_heap(ready.begin(), ready.end(), by_file_pos);
        OpId next = ready.back();
        ready.pop_back();
        ordered.push_back(file_ops[file_pos[next]]);
        for (OpId dep : dependents[next]) {
            if (--pending[dep] == 0) {
                ready.push_back(dep);
                std::push_heap(ready.begin(), ready.end(), by_file_pos);
            }
        }
    }
    if (ordered.size() != file_ops.size()) {
        std::string stuck;
        for (const auto& [id, n] : pending) {
            if (n > 0) stuck += (stuck.empty() ? "" : ", ") + std::to_string(id);
        }
        throw SchemaError("cycle detected among ops {" + stuck + "}");
    }

    g.ops = std::move(ordered);
    for (std::size_t i = 0; i < g.ops.size(); ++i) g.schedule_[g.ops[i].id] = static_cast<int>(i);

    // Consumer lists in schedule order; origin tracing for layout chains.
    for (const auto& op : g.ops) {
        for (TensorId tid : op.inputs) g.tensors.at(tid).consumers.push_back(op.id);
    }
    for (const auto& op : g.ops) {
        for (TensorId tid : op.outputs) {
            TensorSpec& t = g.tensors.at(tid);
            if (op.is_layout_transform && !op.inputs.empty()) {
                t.origin_op = g.tensors.at(op.inputs.front()).origin_op;
            } else {
                t.origin_op = op.id;
            }
        }
    }

    // Producer-before-consumer is implied by a successful sort, but a tensor
    // consumed by nothing and produced by nothing is a stray entry.
    for (const auto& [id, t] : g.tensors) {
        if (t.is_graph_input() && t.consumers.empty()) {
            throw SchemaError("tensor " + std::to_string(id) + " is never produced or consumed");
        }
    }
    return g;
}

ComputationGraph load_graph_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open graph file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return load_graph(buf.str());
}

std::string serialize_graph(const ComputationGraph& graph) {
    json doc;
    doc["element_width"] = graph.element_width;
    doc["ops"] = json::array();
    for (const auto& op : graph.ops) {
        json jo;
        jo["id"] = op.id;
        jo["kind"] = to_string(op.kind);
        jo["inputs"] = op.inputs;
        jo["outputs"] = op.outputs;
        jo["base_time_us"] = op.base_time_us;
        jo["layout_transform"] = op.is_layout_transform;
        jo["crosses_processor"] = op.crosses_processor;
        doc["ops"].push_back(std::move(jo));
    }
    doc["tensors"] = json::array();
    for (const auto& [id, t] : graph.tensors) {
        json jt;
        jt["id"] = id;
        jt["shape"] = t.shape;
        jt["layout"] = to_string(t.layout);
        doc["tensors"].push_back(std::move(jt));
    }
    return doc.dump(2) + "\n";
}

std::map<TensorId, TensorLifetime> compute_lifetimes(const ComputationGraph& graph,
                                                     const DeviceProfile& device) {
    std::vector<double> start(graph.ops.size()), finish(graph.ops.size());
    double t = 0.0;
    for (std::size_t s = 0; s < graph.ops.size(); ++s) {
        start[s] = t;
        t += device.op_time_us(graph.ops[s]);
        finish[s] = t;
    }

    const int last_step = static_cast<int>(graph.ops.size()) - 1;
    std::map<TensorId, TensorLifetime> out;
    for (const auto& [id, tensor] : graph.tensors) {
        TensorLifetime lt;
        double produced_at = 0.0;
        if (tensor.is_graph_input()) {
            lt.first_use = 0;
        } else {
            int ps = graph.step_of(tensor.producer);
            lt.first_use = ps;
            produced_at = finish[static_cast<std::size_t>(ps)];
        }
        if (tensor.is_graph_output()) {
            lt.last_use = last_step;
            lt.freed_lifetime_us = 0.0; // results persist; never unused
        } else {
            int first_consumer = graph.step_of(tensor.consumers.front());
            lt.last_use = graph.step_of(tensor.consumers.back());
            lt.freed_lifetime_us = start[static_cast<std::size_t>(first_consumer)] - produced_at;
        }
        out.emplace(id, lt);
    }
    return out;
}

namespace {

void chain_dfs(const ComputationGraph& graph, TensorId tid, std::set<OpId>& seen,
               std::vector<OpId>& chain) {
    for (OpId cid : graph.tensor(tid).consumers) {
        const OpSpec& consumer = graph.op(cid);
        if (!consumer.is_layout_transform || seen.count(cid)) continue;
        seen.insert(cid);
        chain.push_back(cid);
        for (TensorId out : consumer.outputs) chain_dfs(graph, out, seen, chain);
    }
}

} // namespace

std::vector<OpId> annotate_layout_chain(const ComputationGraph& graph, TensorId tensor_id) {
    std::set<OpId> seen;
    std::vector<OpId> chain;
    chain_dfs(graph, tensor_id, seen, chain);
    return chain;
}

} // namespace memwall
