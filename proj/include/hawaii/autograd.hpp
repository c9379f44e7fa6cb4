// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation.
//
// Operations record onto the tape that is active on the current thread (see
// TapeScope). With no active tape, operations run in inference mode and
// record nothing. A tape may be consumed by exactly one backward() call.

#ifndef HAWAII_AUTOGRAD_HPP
#define HAWAII_AUTOGRAD_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hawaii/tensor.hpp"

namespace hawaii {

class Tape {
public:
    /// Propagates the node output's gradient into its inputs' gradients.
    using BackwardFn = std::function<void(const detail::TensorImpl& out)>;

    struct Node {
        std::string op;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        std::shared_ptr<detail::TensorImpl> output;
        BackwardFn backward;
    };

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t id() const { return id_; }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Appends a node; `output` is marked as produced by this tape.
    void record(std::string op, std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
                const std::shared_ptr<detail::TensorImpl>& output, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1 and runs every node once in reverse order.
    /// Leaf gradients accumulate; nothing is cleared.
    void backward(const Tensor& loss);

    /// The tape active on this thread, or nullptr.
    static Tape* active();

private:
    friend class TapeScope;
    std::uint64_t id_;
    bool consumed_ = false;
    std::vector<Node> nodes_;
};

/// Makes a tape active on the current thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Runs backward on the tape that produced `loss`, which must be active.
void backward(const Tensor& loss);

namespace debug {

/// Fault injection for verifying gradient checkers: every node whose op
/// name equals `op` propagates 1.5x its true gradient. Empty name clears.
void corrupt_backward_rule(std::string_view op);
const std::string& corrupted_backward_rule();

}  // namespace debug

}  // namespace hawaii

#endif  // HAWAII_AUTOGRAD_HPP
