// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#include "hawaii/autograd.hpp"

#include <atomic>

namespace hawaii {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* active_tape = nullptr;
std::string corrupted_rule;

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

void Tape::record(std::string op, std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
                  const std::shared_ptr<detail::TensorImpl>& output, BackwardFn backward) {
    if (consumed_) throw AutogradError("cannot record '" + op + "' on a consumed tape");
    output->requires_grad = true;
    output->tape_id = id_;
    output->node_index = nodes_.size();
    nodes_.push_back(Node{std::move(op), std::move(inputs), output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined()) throw AutogradError("backward on undefined tensor");
    if (loss.numel() != 1) {
        throw AutogradError("backward needs a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    if (consumed_) throw AutogradError("tape already consumed by a previous backward()");
    auto* root = loss.impl();
    if (root->tape_id != id_) throw AutogradError("loss was not produced on this tape");
    consumed_ = true;

    root->grad_buffer()[0] += 1.0;
    for (std::size_t i = root->node_index + 1; i-- > 0;) {
        Node& node = nodes_[i];
        auto& out = *node.output;
        if (out.grad.empty()) continue;  // not reachable from the loss
        if (!corrupted_rule.empty() && node.op == corrupted_rule) {
            for (double& g : out.grad) g *= 1.5;
        }
        node.backward(out);
    }
    // Release saved intermediates; leaf gradients live on in their tensors.
    nodes_.clear();
}

Tape* Tape::active() { return active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

TapeScope::~TapeScope() { active_tape = previous_; }

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw AutogradError("backward() called with no active tape");
    tape->backward(loss);
}

namespace debug {

void corrupt_backward_rule(std::string_view op) { corrupted_rule = std::string(op); }

const std::string& corrupted_backward_rule() { return corrupted_rule; }

}  // namespace debug

}  // namespace hawaii
