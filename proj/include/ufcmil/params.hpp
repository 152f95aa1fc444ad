#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ufcmil/autodiff.hpp"
#include "ufcmil/tensor.hpp"

namespace ufcmil {

/// Named parameter tensors in insertion order.
template <class T>
class BasicParams {
 public:
  using Entry = std::pair<std::string, BasicTensor<T>>;

  void add(std::string name, BasicTensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }

  BasicTensor<T>& at(const std::string& name) { return entries_[index_of(name)].second; }
  const BasicTensor<T>& at(const std::string& name) const {
    return entries_[index_of(name)].second;
  }

  std::size_t size() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  template <class U>
  BasicParams<U> cast() const {
    BasicParams<U> out;
    for (const auto& [name, value] : entries_) out.add(name, value.template cast<U>());
    return out;
  }

  friend bool operator==(const BasicParams& a, const BasicParams& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

using Params = BasicParams<float>;

/// Parameters registered as gradient-requiring leaves on one tape.
template <class T>
class ParamVars {
 public:
  ParamVars(Tape<T>& tape, const BasicParams<T>& params, bool requires_grad = true)
      : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& e : params.entries()) vars_.push_back(tape.leaf(e.second, requires_grad));
  }

  /// Uses existing tape variables, aligned with `params` order.
  ParamVars(const BasicParams<T>& params, std::vector<Var<T>> vars)
      : params_(&params), vars_(std::move(vars)) {}

  Var<T> operator[](const std::string& name) const { return vars_[params_->index_of(name)]; }
  const std::vector<Var<T>>& vars() const { return vars_; }

  /// Gradients in parameter order after tape.backward().
  BasicParams<T> gradients(const Tape<T>& tape) const {
    BasicParams<T> g;
    for (std::size_t i = 0; i < vars_.size(); ++i)
      g.add(params_->entries()[i].first, tape.grad(vars_[i]));
    return g;
  }

 private:
  const BasicParams<T>* params_;
  std::vector<Var<T>> vars_;
};

inline constexpr char kCheckpointMagic[4] = {'U', 'F', 'C', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint: magic "UFCM", version u32, count u32, then per entry
/// name length u16, UTF-8 name, rank u8, dims u32 each, f32 payload. All
/// integers and floats little-endian.
std::vector<char> encode_checkpoint(const Params& params);
Params decode_checkpoint(const std::vector<char>& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const Params& params, const std::filesystem::path& path);
Params load_checkpoint(const std::filesystem::path& path);

}  // namespace ufcmil
