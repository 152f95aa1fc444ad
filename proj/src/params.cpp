#include "ufcmil/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ufcmil/bag.hpp"

namespace ufcmil {

namespace {

void put_le(std::vector<char>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::vector<char>& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  std::uint64_t le(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw DataError(origin_ + ": truncated at byte " + std::to_string(pos_));
  }

  const std::vector<char>& bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_checkpoint(const Params& params) {
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_le(out, kCheckpointVersion, 4);
  put_le(out, params.size(), 4);
  for (const auto& [name, t] : params.entries()) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("parameter name too long");
    put_le(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    put_le(out, t.rank(), 1);
    for (auto d : t.shape()) put_le(out, d, 4);
    for (float v : t.data()) put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  }
  return out;
}

Params decode_checkpoint(const std::vector<char>& bytes, const std::string& origin) {
  Reader in(bytes, origin);
  if (in.str(4) != std::string(kCheckpointMagic, 4))
    throw DataError(origin + ": bad magic, expected UFCM");
  const auto version = in.le(4);
  if (version != kCheckpointVersion)
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = in.le(4);
  Params params;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name = in.str(in.le(2));
    const auto rank = in.le(1);
    if (rank == 0) throw DataError(origin + ": parameter " + name + " has rank 0");
    Shape shape(rank);
    for (auto& d : shape) d = in.le(4);
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<float>(static_cast<std::uint32_t>(in.le(4)));
    try {
      params.add(name, Tensor(shape, std::move(data)));
    } catch (const std::invalid_argument& ex) {
      throw DataError(origin + ": " + ex.what());
    }
  }
  if (!in.done()) throw DataError(origin + ": trailing bytes after last parameter");
  return params;
}

void save_checkpoint(const Params& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes, path.string());
}

}  // namespace ufcmil
