#include "localgrad/container.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "localgrad/error.hpp"

namespace localgrad {
namespace {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  const std::string& buffer() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(const char* what) { return le(8, what); }
  double f64(const char* what) { return std::bit_cast<double>(le(8, what)); }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what, std::size_t at) const {
    throw FormatError(origin_ + ": " + what + " at byte offset " + std::to_string(at));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) fail(std::string("truncated ") + what, pos_);
  }
  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& container) {
  Writer w;
  w.bytes(magic);
  w.u32(container.version);
  w.u64(container.header.size());
  w.bytes(container.header);
  w.u64(container.tensors.size());
  for (const auto& t : container.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u64(d);
    for (double v : t.value.data()) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}), path.string());

  if (r.remaining() < magic.size() || r.bytes(magic.size(), "magic") != magic) {
    r.fail("bad magic, expected \"" + std::string(magic) + "\"", 0);
  }
  Container c;
  const std::size_t version_at = r.offset();
  c.version = r.u32("version");
  if (c.version != 1) r.fail("unsupported version " + std::to_string(c.version), version_at);
  const auto header_len = r.u64("header length");
  c.header = std::string(r.bytes(header_len, "header"));
  const auto count = r.u64("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = std::string(r.bytes(r.u32("name length"), "tensor name"));
    const std::size_t rank_at = r.offset();
    const auto rank = r.u32("rank");
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank), rank_at);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u64("dimension"));
    const std::size_t n = numel(shape);
    if (n > r.remaining() / 8) r.fail("tensor '" + t.name + "' larger than the file", r.offset());
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64("tensor values");
    t.value = Tensor(std::move(shape), std::move(values));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) r.fail("trailing bytes", r.offset());
  return c;
}

}  // namespace localgrad
