#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "msdial/tensor.hpp"

namespace msdial {

enum class OpKind {
    kAdd,
    kSub,
    kMul,
    kNeg,
    kRelu,
    kLog,
    kExp,
    kMatmul,
    kConv2d,
    kLogSoftmax,
    kSumTo,
    kSumAll,
    kSliceRows,
    kConcatRows,
    kReshape,
};

/// One executed differentiable operation. `backward` reads output->grad and
/// accumulates into the grads of inputs that require them.
struct TapeEntry {
    OpKind kind;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void()> backward;
};

/// Topologically ordered record of executed ops. Single-writer: one tape
/// belongs to one training thread. Ops record onto the thread's active tape
/// (see TapeScope) whenever an input requires a gradient.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    void clear() { entries_.clear(); }

    /// Replays adjoints in reverse order from a scalar root recorded on this
    /// tape. Leaf gradients accumulate across calls; intermediate gradients
    /// are recomputed fresh each call. Throws if root is not scalar or was
    /// not produced under this tape.
    void backward(const Tensor& root);

    /// The tape ops currently record to for this thread, or nullptr.
    static Tape* active();

private:
    friend class TapeScope;
    std::vector<TapeEntry> entries_;
};

/// RAII activation of a tape for the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// RAII suppression of recording (pure forward evaluation).
class NoTapeScope {
public:
    NoTapeScope();
    ~NoTapeScope();
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape* previous_;
};

/// Convenience wrapper: backward on the thread's active tape.
void backward(const Tensor& root);

}  // namespace msdial
