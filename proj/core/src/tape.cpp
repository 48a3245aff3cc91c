#include "msdial/tape.hpp"

#include <algorithm>
#include <stdexcept>

namespace msdial {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() {
    return g_active_tape;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
    g_active_tape = &tape;
}

TapeScope::~TapeScope() {
    g_active_tape = previous_;
}

NoTapeScope::NoTapeScope() : previous_(g_active_tape) {
    g_active_tape = nullptr;
}

NoTapeScope::~NoTapeScope() {
    g_active_tape = previous_;
}

void Tape::backward(const Tensor& root) {
    if (root.numel() != 1) {
        throw std::invalid_argument("backward root must be a scalar, got shape " +
                                    shape_str(root.shape()));
    }
    const auto& root_impl = root.impl();
    bool produced_here = std::any_of(entries_.begin(), entries_.end(),
                                     [&](const TapeEntry& e) { return e.output == root_impl; });
    if (!produced_here) {
        throw std::invalid_argument("backward root was not produced under the active tape");
    }

    // Intermediate grads are scratch: reset them so repeated backward calls
    // accumulate only into leaves.
    for (TapeEntry& entry : entries_) {
        if (!entry.output->grad.empty()) {
            std::fill(entry.output->grad.begin(), entry.output->grad.end(), 0.0);
        }
    }

    root_impl->ensure_grad();
    root_impl->grad[0] = 1.0;

    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // no path to the root
        it->backward();
    }
}

void backward(const Tensor& root) {
    Tape* tape = Tape::active();
    if (tape == nullptr) {
        throw std::logic_error("backward called without an active tape");
    }
    tape->backward(root);
}

}  // namespace msdial
