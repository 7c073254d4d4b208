#include "mor/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mor {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'R', '1'};
constexpr std::uint8_t kTagLora = 0;
constexpr std::uint8_t kTagMoeLora = 1;
constexpr std::uint8_t kTagMor = 2;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::runtime_error("checkpoint " + path + ": " + what);
}

void put_u16(std::ostream& out, std::uint16_t v) {
    const char bytes[2] = {static_cast<char>(v & 0xff),
                           static_cast<char>((v >> 8) & 0xff)};
    out.write(bytes, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(bytes, 4);
}

void put_f64(std::ostream& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i)
        bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
}

void put_matrix(std::ostream& out, const Matrix& m, const std::string& path) {
    if (m.rows() > 0xffffffffull || m.cols() > 0xffffffffull)
        fail(path, "tensor dims overflow u32");
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

struct Reader {
    std::ifstream in;
    std::string path;

    void read_bytes(char* dst, std::size_t n) {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) fail(path, "truncated file");
    }

    std::uint16_t get_u16() {
        char b[2];
        read_bytes(b, 2);
        return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[0]) |
                                          (static_cast<std::uint8_t>(b[1]) << 8));
    }

    std::uint32_t get_u32() {
        char b[4];
        read_bytes(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
        return v;
    }

    std::uint8_t get_u8() {
        char b;
        read_bytes(&b, 1);
        return static_cast<std::uint8_t>(b);
    }

    double get_f64() {
        char b[8];
        read_bytes(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
        return std::bit_cast<double>(v);
    }

    Matrix get_matrix(std::size_t want_rows, std::size_t want_cols) {
        const std::uint32_t rows = get_u32();
        const std::uint32_t cols = get_u32();
        if (rows != want_rows || cols != want_cols)
            fail(path, "tensor shape " + std::to_string(rows) + "x" +
                           std::to_string(cols) + ", expected " +
                           std::to_string(want_rows) + "x" +
                           std::to_string(want_cols));
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = get_f64();
        return m;
    }
};

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open for writing");
    return out;
}

void write_header(std::ostream& out, std::uint8_t tag, std::size_t d_in,
                  std::size_t d_out, std::size_t r, std::size_t n,
                  double alpha, const std::string& path) {
    out.write(kMagic, 4);
    put_u16(out, checkpoint_version);
    out.put(static_cast<char>(tag));
    if (d_in > 0xffffffffull || d_out > 0xffffffffull || r > 0xffffffffull ||
        n > 0xffffffffull)
        fail(path, "dims overflow u32");
    put_u32(out, static_cast<std::uint32_t>(d_in));
    put_u32(out, static_cast<std::uint32_t>(d_out));
    put_u32(out, static_cast<std::uint32_t>(r));
    put_u32(out, static_cast<std::uint32_t>(n));
    put_f64(out, alpha);
}

void finish(std::ofstream& out, const std::string& path) {
    if (!out) fail(path, "write failed");
    out.close();
    if (!out) fail(path, "close failed");
}

}  // namespace

void write_checkpoint(const LoRALayer& layer, const std::string& path) {
    std::ofstream out = open_out(path);
    write_header(out, kTagLora, layer.d_in(), layer.d_out(), layer.rank, 1,
                 layer.alpha, path);
    put_matrix(out, layer.a, path);
    put_matrix(out, layer.b, path);
    finish(out, path);
}

void write_checkpoint(const MoELoRALayer& layer, const std::string& path) {
    std::ofstream out = open_out(path);
    write_header(out, kTagMoeLora, layer.d_in(), layer.d_out(), layer.rank,
                 layer.n_experts(), layer.alpha, path);
    for (const MoELoRAExpert& e : layer.experts) {
        put_matrix(out, e.a, path);
        put_matrix(out, e.b, path);
    }
    put_matrix(out, layer.wr, path);
    finish(out, path);
}

void write_checkpoint(const MoRLayer& layer, const std::string& path) {
    std::ofstream out = open_out(path);
    write_header(out, kTagMor, layer.d_in(), layer.d_out(), layer.rank,
                 layer.n_experts, layer.alpha, path);
    put_matrix(out, layer.a, path);
    put_matrix(out, layer.b, path);
    put_matrix(out, layer.omega_a, path);
    put_matrix(out, layer.omega_b, path);
    put_matrix(out, layer.wr, path);
    finish(out, path);
}

AnyLayer read_checkpoint(const std::string& path) {
    Reader r;
    r.path = path;
    r.in.open(path, std::ios::binary);
    if (!r.in) fail(path, "cannot open");

    char magic[4];
    r.read_bytes(magic, 4);
    if (magic[0] != kMagic[0] || magic[1] != kMagic[1] || magic[2] != kMagic[2] ||
        magic[3] != kMagic[3])
        fail(path, "bad magic");

    const std::uint16_t version = r.get_u16();
    if (version != checkpoint_version)
        fail(path, "version " + std::to_string(version) +
                       " unsupported, reader handles " +
                       std::to_string(checkpoint_version));

    const std::uint8_t tag = r.get_u8();
    const std::size_t d_in = r.get_u32();
    const std::size_t d_out = r.get_u32();
    const std::size_t rank = r.get_u32();
    const std::size_t n = r.get_u32();
    const double alpha = r.get_f64();
    if (d_in == 0 || d_out == 0 || rank == 0 || n == 0)
        fail(path, "zero dimension in header");

    AnyLayer result;
    if (tag == kTagLora) {
        LoRALayer layer;
        layer.alpha = alpha;
        layer.rank = rank;
        layer.w = Matrix(d_out, d_in);
        layer.a = r.get_matrix(rank, d_in);
        layer.b = r.get_matrix(d_out, rank);
        result = std::move(layer);
    } else if (tag == kTagMoeLora) {
        MoELoRALayer layer;
        layer.alpha = alpha;
        layer.rank = rank;
        layer.w = Matrix(d_out, d_in);
        for (std::size_t i = 0; i < n; ++i) {
            MoELoRAExpert e;
            e.a = r.get_matrix(rank, d_in);
            e.b = r.get_matrix(d_out, rank);
            layer.experts.push_back(std::move(e));
        }
        layer.wr = r.get_matrix(n, d_in);
        result = std::move(layer);
    } else if (tag == kTagMor) {
        MoRLayer layer;
        layer.alpha = alpha;
        layer.rank = rank;
        layer.n_experts = n;
        layer.w = Matrix(d_out, d_in);
        layer.a = r.get_matrix(rank, d_in);
        layer.b = r.get_matrix(d_out, rank);
        layer.omega_a = r.get_matrix(n, rank);
        layer.omega_b = r.get_matrix(n, d_out);
        layer.wr = r.get_matrix(n, d_in);
        result = std::move(layer);
    } else {
        fail(path, "unknown method tag " + std::to_string(tag));
    }

    r.in.peek();
    if (!r.in.eof()) fail(path, "trailing bytes after final tensor");
    return result;
}

}  // namespace mor
