// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape. Ops append entries in execution order, which is already
// topological: every input id precedes the id of the output it produces.
// backward() seeds the requested scalar with 1 and replays entries in reverse.
#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "dvit/tensor.hpp"

namespace dvit {

class Tape;

// Grants backward closures access to adjoint buffers.
class AdjointView {
 public:
  explicit AdjointView(Tape& tape) : tape_(tape) {}
  // Read-only adjoint of a node; nullptr when nothing flowed into it.
  const std::vector<float>* of(std::uint32_t node) const;
  // Accumulation buffer, zero-initialized on first access.
  std::vector<float>& into(std::uint32_t node);

 private:
  Tape& tape_;
};

using BackwardFn = std::function<void(AdjointView&)>;

// The active tape is thread-local; construction activates, destruction
// restores the previous one. A tape must stay on the thread that built it
// for the whole forward/backward pair.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Registers a leaf so it receives a grad (zero if unused) after backward.
  void watch(const Tensor& t);

  // Accumulates d(loss)/d(leaf) into every tracked leaf's grad buffer.
  // loss must be a scalar recorded on this tape.
  void backward(const Tensor& loss);

  bool tracks(const Tensor& t) const;
  // True when gradient can flow out of t: it requires grad or some recorded
  // entry produced it. Ops record themselves iff any input flows.
  bool flows(const Tensor& t) const;
  std::uint32_t node_of(const Tensor& t);  // assigns an id on first touch
  void record(const char* op, std::vector<std::uint32_t> inputs,
              std::uint32_t output, BackwardFn fn);

  std::size_t size() const { return entries_.size(); }

 private:
  friend class AdjointView;

  struct Entry {
    const char* op;
    std::vector<std::uint32_t> inputs;
    std::uint32_t output;
    BackwardFn fn;
  };

  std::uint64_t gen_;
  Tape* prev_ = nullptr;
  std::vector<Entry> entries_;
  std::vector<detail::Storage*> nodes_;      // node id -> storage
  std::vector<Tensor> keep_alive_;           // pins storages referenced above
  std::vector<bool> produced_;               // node id has a producing entry
  std::vector<std::vector<float>> adjoint_;  // node id -> adjoint, may be empty
};

// Suspends tracking on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// backward through the active tape; contract error when there is none.
void backward(const Tensor& loss);

}  // namespace dvit
