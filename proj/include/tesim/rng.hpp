#pragma once

#include <array>
#include <cstdint>

namespace tesim::rng {

// Philox 4x32-10 block cipher acting as a counter-based random generator.
// Chosen over the standard-library engines because draws are a pure function
// of (key, counter): parallel workers and per-object streams stay
// reproducible no matter how work is scheduled.
struct Philox4x32 {
    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> counter,
                                              std::array<std::uint32_t, 2> key);
};

// One independent draw sequence, addressed by (seed, stream). The seed is the
// cipher key; the stream id occupies the low counter words and a running
// block index the high ones, so every stream has 2^64 blocks of its own.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream);

    std::uint32_t next_u32();
    std::uint64_t next_u64(); // two words, low half first

    double uniform();     // [0, 1), 53-bit resolution
    double uniform_pos(); // (0, 1], safe under log()
    double gaussian();    // standard normal

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 2> stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int used_ = 4; // words consumed from buf_
    double spare_gauss_ = 0.0;
    bool have_spare_ = false;
};

} // namespace tesim::rng
