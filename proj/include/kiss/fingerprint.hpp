#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace kiss {

/// 64-bit FNV-1a content hash, used to tie artifacts and responses to the
/// exact portfolio bytes they were computed from.
class Fnv1a {
public:
    void update(std::string_view bytes) {
        for (unsigned char c : bytes) {
            state_ ^= c;
            state_ *= 0x100000001B3ULL;
        }
    }

    template <class T>
    void update_value(const T& value) {
        char buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        update(std::string_view(buf, sizeof(T)));
    }

    std::uint64_t value() const { return state_; }

    std::string hex() const {
        static constexpr char digits[] = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 15; i >= 0; --i) out[15 - i] = digits[(state_ >> (4 * i)) & 0xF];
        return out;
    }

private:
    std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::string fingerprint(std::string_view bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.hex();
}

}  // namespace kiss
