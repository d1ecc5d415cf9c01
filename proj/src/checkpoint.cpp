#include "consformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "consformer/errors.hpp"

namespace cf {
namespace {

constexpr char kMagic[4] = {'V', 'C', 'F', 'K'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(u & 0xFFu));
    u = static_cast<U>(u >> 8);
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ValidationError("checkpoint: truncated input");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, entry] : store) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("checkpoint: parameter name too long");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const Shape& s = entry.value.shape();
    out.push_back(static_cast<std::uint8_t>(s.rank()));
    for (std::size_t a = 0; a < s.rank(); ++a) put_le<std::uint64_t>(out, s[a]);
    for (double v : entry.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParamStore decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.str(4) != std::string(kMagic, 4)) throw ValidationError("checkpoint: bad magic bytes");
  const auto version = in.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto count = in.le<std::uint32_t>();
  ParamStore store;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = in.le<std::uint16_t>();
    std::string name = in.str(len);
    const auto rank = in.le<std::uint8_t>();
    if (rank > Shape::kMaxRank) throw ValidationError("checkpoint: rank " + std::to_string(rank) + " in '" + name + "'");
    std::vector<std::size_t> ext(rank);
    for (auto& x : ext) x = static_cast<std::size_t>(in.le<std::uint64_t>());
    Shape shape(ext);
    std::vector<double> data(shape.numel());
    for (double& v : data) v = std::bit_cast<double>(in.le<std::uint64_t>());
    if (store.contains(name)) throw ValidationError("checkpoint: duplicate entry '" + name + "'");
    store.add(name, Tensor(shape, std::move(data)));
  }
  if (!in.done()) throw ValidationError("checkpoint: trailing bytes");
  return store;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void assign_parameters(ParamStore& target, const ParamStore& source) {
  if (target.size() != source.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(source.size()) + " parameters, model has " +
                          std::to_string(target.size()));
  }
  for (auto& [name, entry] : target) {
    if (!source.contains(name)) throw ValidationError("checkpoint lacks parameter '" + name + "'");
    const Tensor& v = source.value(name);
    require_same_shape(entry.value.shape(), v.shape(), name.c_str());
    entry.value = v;
  }
}

}  // namespace cf
