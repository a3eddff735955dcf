// SPDX-License-Identifier: Apache-2.0
#include "dvit/tape.hpp"

#include <atomic>

namespace dvit {

namespace {
thread_local Tape* g_active = nullptr;
std::atomic<std::uint64_t> g_gen{1};
}  // namespace

const std::vector<float>* AdjointView::of(std::uint32_t node) const {
  const auto& a = tape_.adjoint_[node];
  return a.empty() ? nullptr : &a;
}

std::vector<float>& AdjointView::into(std::uint32_t node) {
  auto& a = tape_.adjoint_[node];
  if (a.empty()) a.assign(tape_.nodes_[node]->data.size(), 0.0f);
  return a;
}

Tape::Tape() : gen_(g_gen.fetch_add(1)), prev_(g_active) { g_active = this; }

Tape::~Tape() { g_active = prev_; }

Tape* Tape::active() { return g_active; }

bool Tape::tracks(const Tensor& t) const {
  return t.defined() && t.storage().mark.gen == gen_;
}

bool Tape::flows(const Tensor& t) const {
  if (!t.defined()) return false;
  if (t.requires_grad()) return true;
  const auto& mark = t.storage().mark;
  return mark.gen == gen_ && produced_[mark.node];
}

std::uint32_t Tape::node_of(const Tensor& t) {
  auto* st = t.storage_ptr();
  if (st->mark.gen == gen_) return st->mark.node;
  auto id = static_cast<std::uint32_t>(nodes_.size());
  st->mark = {gen_, id};
  nodes_.push_back(st);
  keep_alive_.push_back(t);
  produced_.push_back(false);
  adjoint_.emplace_back();
  return id;
}

void Tape::watch(const Tensor& t) {
  if (!t.requires_grad())
    throw ContractError("watch() on a tensor without requires_grad");
  node_of(t);
}

void Tape::record(const char* op, std::vector<std::uint32_t> inputs,
                  std::uint32_t output, BackwardFn fn) {
  produced_[output] = true;
  entries_.push_back(Entry{op, std::move(inputs), output, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got " +
                        shape_str(loss.shape()));
  if (!tracks(loss))
    throw ContractError("backward() on a loss not recorded by this tape");

  for (auto& a : adjoint_) a.clear();
  adjoint_[loss.storage().mark.node].assign(1, 1.0f);

  AdjointView view(*this);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (adjoint_[it->output].empty()) continue;  // nothing flowed here
    it->fn(view);
  }

  // Leaves: watched or op inputs with no producer. Unreached ones get zeros.
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (produced_[id] || !nodes_[id]->requires_grad) continue;
    auto& st = *nodes_[id];
    if (!adjoint_[id].empty())
      st.grad = adjoint_[id];
    else
      st.grad.assign(st.data.size(), 0.0f);
    st.has_grad = true;
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active) { g_active = nullptr; }

NoGradGuard::~NoGradGuard() { g_active = saved_; }

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw ContractError("backward() with no active tape");
  t->backward(loss);
}

}  // namespace dvit
