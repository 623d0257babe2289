#include "distillab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace distillab {

namespace {

void write_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

// Serialize floats as little-endian regardless of host order.
template <typename T>
void write_payload(std::ostream& os, const std::vector<T>& vals) {
    for (T v : vals) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        os.write(reinterpret_cast<const char*>(b), sizeof(T));
    }
}

template <typename T>
void read_payload(std::istream& is, std::vector<T>& vals) {
    for (auto& v : vals) {
        unsigned char b[sizeof(T)];
        is.read(reinterpret_cast<char*>(b), sizeof(T));
        std::memcpy(&v, b, sizeof(T));
    }
}

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor<float>& t) {
    if (index_.count(name)) throw std::invalid_argument("checkpoint: duplicate tensor name " + name);
    if (name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: name too long");
    Entry e;
    e.name = name;
    e.dtype = 0;
    e.shape = t.shape();
    e.f32 = t.values();
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
}

void Checkpoint::put(const std::string& name, const Tensor<double>& t) {
    if (index_.count(name)) throw std::invalid_argument("checkpoint: duplicate tensor name " + name);
    if (name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: name too long");
    Entry e;
    e.name = name;
    e.dtype = 1;
    e.shape = t.shape();
    e.f64 = t.values();
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
}

bool Checkpoint::has(const std::string& name) const { return index_.count(name) != 0; }

const Checkpoint::Entry& Checkpoint::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("checkpoint: no tensor named " + name);
    return entries_[it->second];
}

Tensor<float> Checkpoint::get_f32(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != 0) throw std::invalid_argument("checkpoint: " + name + " is not f32");
    return Tensor<float>::from(e.shape, e.f32);
}

Tensor<double> Checkpoint::get_f64(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != 1) throw std::invalid_argument("checkpoint: " + name + " is not f64");
    return Tensor<double>::from(e.shape, e.f64);
}

void Checkpoint::load_into(const std::string& name, Tensor<float>& t) const {
    const Entry& e = find(name);
    if (e.dtype != 0) throw std::invalid_argument("checkpoint: " + name + " is not f32");
    if (e.shape != t.shape())
        throw std::invalid_argument("checkpoint: shape mismatch loading " + name + ": file " +
                                    shape_str(e.shape) + " vs target " + shape_str(t.shape()));
    std::copy(e.f32.begin(), e.f32.end(), t.data());
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write("DSTL", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        write_u16(os, static_cast<uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        os.put(static_cast<char>(e.shape.size()));
        for (int d : e.shape) write_u32(os, static_cast<uint32_t>(d));
        os.put(static_cast<char>(e.dtype));
        if (e.dtype == 0)
            write_payload(os, e.f32);
        else
            write_payload(os, e.f64);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DSTL", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = read_u32(is);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint32_t count = read_u32(is);
    Checkpoint ck;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t nlen = read_u16(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        int rank = is.get();
        if (rank < 0) throw std::runtime_error("checkpoint: truncated file " + path);
        std::vector<int> shape(static_cast<size_t>(rank));
        for (auto& d : shape) d = static_cast<int>(read_u32(is));
        int dtype = is.get();
        int64_t numel = shape_numel(shape);
        if (dtype == 0) {
            std::vector<float> vals(static_cast<size_t>(numel));
            read_payload(is, vals);
            if (!is) throw std::runtime_error("checkpoint: truncated payload in " + path);
            ck.put(name, Tensor<float>::from(shape, std::move(vals)));
        } else if (dtype == 1) {
            std::vector<double> vals(static_cast<size_t>(numel));
            read_payload(is, vals);
            if (!is) throw std::runtime_error("checkpoint: truncated payload in " + path);
            ck.put(name, Tensor<double>::from(shape, std::move(vals)));
        } else {
            throw std::runtime_error("checkpoint: unknown dtype tag in " + path);
        }
    }
    return ck;
}

}  // namespace distillab
