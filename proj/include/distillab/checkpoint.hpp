#pragma once

// DSTL checkpoint container: a flat, ordered name→tensor archive.
//
// Layout (all integers little-endian):
//   magic "DSTL" | u32 version=1 | u32 count
//   per tensor: u16 name length | name bytes | u8 rank | rank×u32 dims
//             | u8 dtype (0=f32, 1=f64) | payload
// The writer is byte-deterministic: identical contents produce identical files.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distillab/tensor.hpp"

namespace distillab {

class Checkpoint {
public:
    void put(const std::string& name, const Tensor<float>& t);
    void put(const std::string& name, const Tensor<double>& t);

    bool has(const std::string& name) const;
    Tensor<float> get_f32(const std::string& name) const;
    Tensor<double> get_f64(const std::string& name) const;

    // Copies values into an existing tensor with matching shape (parameter loading).
    void load_into(const std::string& name, Tensor<float>& t) const;

    std::vector<std::string> names() const;  // insertion order
    size_t size() const { return entries_.size(); }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    struct Entry {
        std::string name;
        uint8_t dtype = 0;  // 0=f32, 1=f64
        std::vector<int> shape;
        std::vector<float> f32;
        std::vector<double> f64;
    };
    const Entry& find(const std::string& name) const;
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

}  // namespace distillab
