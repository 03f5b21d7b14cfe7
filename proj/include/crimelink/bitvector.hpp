#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace crimelink {

// Fixed-length bit sequence; one bit per schema parameter.
class BitVector {
public:
    BitVector() = default;
    explicit BitVector(std::size_t size) : size_(size), words_((size + 63) / 64, 0) {}

    std::size_t size() const { return size_; }
    std::span<const std::uint64_t> words() const { return words_; }

    bool test(std::size_t i) const {
        check(i);
        return (words_[i / 64] >> (i % 64)) & 1u;
    }
    void set(std::size_t i, bool value = true) {
        check(i);
        std::uint64_t mask = std::uint64_t{1} << (i % 64);
        if (value)
            words_[i / 64] |= mask;
        else
            words_[i / 64] &= ~mask;
    }

    std::size_t popcount() const {
        std::size_t n = 0;
        for (auto w : words_)
            n += static_cast<std::size_t>(std::popcount(w));
        return n;
    }

    bool none() const {
        for (auto w : words_)
            if (w)
                return false;
        return true;
    }

    std::size_t and_count(const BitVector& o) const {
        same_length(o);
        std::size_t n = 0;
        for (std::size_t i = 0; i < words_.size(); ++i)
            n += static_cast<std::size_t>(std::popcount(words_[i] & o.words_[i]));
        return n;
    }
    std::size_t or_count(const BitVector& o) const {
        same_length(o);
        std::size_t n = 0;
        for (std::size_t i = 0; i < words_.size(); ++i)
            n += static_cast<std::size_t>(std::popcount(words_[i] | o.words_[i]));
        return n;
    }

    // Every bit of `mask` is set here.
    bool contains_all(const BitVector& mask) const {
        same_length(mask);
        for (std::size_t i = 0; i < words_.size(); ++i)
            if ((words_[i] & mask.words_[i]) != mask.words_[i])
                return false;
        return true;
    }
    bool intersects(const BitVector& o) const {
        same_length(o);
        for (std::size_t i = 0; i < words_.size(); ++i)
            if (words_[i] & o.words_[i])
                return true;
        return false;
    }

    // Indices of set bits, ascending.
    std::vector<std::size_t> ones() const {
        std::vector<std::size_t> out;
        for (std::size_t w = 0; w < words_.size(); ++w) {
            std::uint64_t bits = words_[w];
            while (bits) {
                out.push_back(w * 64 + static_cast<std::size_t>(std::countr_zero(bits)));
                bits &= bits - 1;
            }
        }
        return out;
    }

    friend bool operator==(const BitVector&, const BitVector&) = default;

private:
    void check(std::size_t i) const {
        if (i >= size_)
            throw std::out_of_range("bit index out of range");
    }
    void same_length(const BitVector& o) const {
        if (o.size_ != size_)
            throw std::invalid_argument("bit vector length mismatch");
    }

    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

} // namespace crimelink
