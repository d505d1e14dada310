#include "fbm/checkpoint.hpp"

#include "fbm/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace fbm::checkpoint {

namespace {

constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void put_u32(std::string& out, std::uint32_t v)
{
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

std::uint32_t to_u32(std::size_t v, const char* what)
{
    if (v > UINT32_MAX) {
        throw FormatError(std::string(what) + " does not fit a u32 field");
    }
    return static_cast<std::uint32_t>(v);
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    void need(std::size_t n, const char* what) const
    {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated checkpoint while reading ") + what);
        }
    }

    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }

    std::string text(std::size_t n, const char* what)
    {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void doubles(double* dst, std::size_t n, const char* what)
    {
        if (n > (bytes_.size() - pos_) / 8) {
            throw FormatError(std::string("truncated checkpoint while reading ") + what);
        }
        std::memcpy(dst, bytes_.data() + pos_, n * 8);
        pos_ += n * 8;
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    std::string bytes_;
    std::size_t pos_ = 0;
};

} // namespace

const Tensor* Container::find(const std::string& name) const
{
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

void save(const std::string& path, const Container& c)
{
    std::string out(kMagic, kMagicLen);
    put_u32(out, to_u32(c.header.size(), "header"));
    out += c.header;
    put_u32(out, to_u32(c.tensors.size(), "tensor count"));
    for (const auto& [name, t] : c.tensors) {
        put_u32(out, to_u32(name.size(), "tensor name"));
        out += name;
        put_u32(out, to_u32(t.rank(), "rank"));
        for (std::size_t d : t.shape()) {
            put_u32(out, to_u32(d, "dimension"));
        }
        const auto data = t.data();
        out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) {
        throw DataError("failed writing '" + path + "'");
    }
}

Container load(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError("cannot open '" + path + "'");
    }
    Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
    if (r.text(kMagicLen, "magic") != std::string(kMagic, kMagicLen)) {
        throw FormatError("'" + path + "' is not an FBMCKPT1 container (bad magic)");
    }
    Container c;
    c.header = r.text(r.u32("header length"), "header");
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.text(r.u32("name length"), "tensor name");
        const std::uint32_t rank = r.u32("rank");
        Shape shape(rank);
        for (auto& d : shape) {
            d = r.u32("dimension");
        }
        Tensor t(shape);
        r.doubles(t.data().data(), t.size(), "tensor values");
        c.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.done()) {
        throw FormatError("trailing bytes after the last tensor in '" + path + "'");
    }
    return c;
}

std::vector<std::pair<std::string, std::string>> parse_header(const std::string& header)
{
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(header);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("header line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        }
        out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return out;
}

std::uint64_t fnv1a(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace fbm::checkpoint
