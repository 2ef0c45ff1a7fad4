#include "prosma/pgm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace prosma {

namespace {

struct Reader {
    std::vector<char> bytes;
    size_t pos = 0;
    std::string path;

    [[noreturn]] void fail(const std::string& what, size_t at) const {
        throw ParseError(path + ": " + what + " at byte " + std::to_string(at));
    }

    bool eof() const { return pos >= bytes.size(); }
    char peek() const { return bytes[pos]; }

    void skip_space_and_comments() {
        while (!eof()) {
            char c = peek();
            if (c == '#') {  // comment runs to end of line
                while (!eof() && peek() != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    int64_t read_int(const std::string& field) {
        skip_space_and_comments();
        size_t start = pos;
        int64_t v = 0;
        bool any = false;
        while (!eof() && peek() >= '0' && peek() <= '9') {
            v = v * 10 + (peek() - '0');
            ++pos;
            any = true;
        }
        if (!any) {
            fail("expected integer for " + field, start);
        }
        return v;
    }
};

}  // namespace

void write_pgm(const std::string& path, const Tensor& image) {
    int64_t h, w;
    if (image.rank() == 2) {
        h = image.dim(0);
        w = image.dim(1);
    } else if (image.rank() == 3 && image.dim(0) == 1) {
        h = image.dim(1);
        w = image.dim(2);
    } else {
        throw ShapeError("write_pgm: image must be [H,W] or [1,H,W]");
    }
    const double* v = image.data();
    for (int64_t i = 0; i < h * w; ++i) {
        if (!(v[i] >= 0.0 && v[i] <= 1.0)) {
            throw ContractError("write_pgm: values must lie in [0,1]");
        }
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path + " for writing");
    }
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            row[static_cast<size_t>(x)] =
                static_cast<unsigned char>(std::lround(v[y * w + x] * 255.0));
        }
        f.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!f) {
        throw IoError("short write to " + path);
    }
}

Tensor read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path + " for reading");
    }
    Reader r;
    r.path = path;
    r.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());

    if (r.bytes.size() < 2 || r.bytes[0] != 'P' || r.bytes[1] != '5') {
        std::string magic = r.bytes.size() >= 2 ? std::string(r.bytes.data(), 2) : "";
        r.fail("unsupported magic \"" + magic + "\" (want binary P5)", 0);
    }
    r.pos = 2;
    int64_t w = r.read_int("width");
    int64_t h = r.read_int("height");
    int64_t maxval = r.read_int("maxval");
    if (w < 1 || h < 1) {
        r.fail("non-positive image dimensions", r.pos);
    }
    if (maxval != 255) {
        r.fail("unsupported maxval " + std::to_string(maxval) + " (want 255)", r.pos);
    }
    // exactly one whitespace byte separates the header from the payload
    if (r.eof() || !(r.peek() == '\n' || r.peek() == ' ' || r.peek() == '\t' ||
                     r.peek() == '\r')) {
        r.fail("missing whitespace after maxval", r.pos);
    }
    ++r.pos;
    size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
    if (r.bytes.size() - r.pos < need) {
        r.fail("truncated payload: need " + std::to_string(need) + " bytes, have " +
                   std::to_string(r.bytes.size() - r.pos),
               r.bytes.size());
    }

    Tensor out = Tensor::zeros({1, h, w});
    double* ov = out.data();
    const unsigned char* p = reinterpret_cast<const unsigned char*>(r.bytes.data()) + r.pos;
    for (size_t i = 0; i < need; ++i) {
        ov[i] = static_cast<double>(p[i]) / 255.0;
    }
    return out;
}

}  // namespace prosma
