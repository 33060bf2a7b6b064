#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dtql {

// Persistent worker pool for row-partitioned kernels. Every task writes a
// disjoint output slice, so results are bit-identical for any worker count
// or scheduling order.
class ThreadPool {
public:
    static ThreadPool& instance();

    int size() const { return threads_ + 1; }  // workers plus the caller
    static bool in_worker();

    // Runs fn(block) for block in [0, nblocks); returns when all are done.
    void run(int nblocks, const std::function<void(int)>& fn);

    ~ThreadPool();

private:
    ThreadPool();
    void worker_loop();

    int threads_ = 0;
    std::vector<std::thread> pool_;
    std::mutex mu_;
    std::condition_variable cv_start_;
    std::condition_variable cv_done_;
    const std::function<void(int)>* job_ = nullptr;
    int job_blocks_ = 0;
    std::atomic<int> next_block_{0};
    std::atomic<int> remaining_{0};
    uint64_t generation_ = 0;
    bool stop_ = false;
};

// Splits [0, n) into contiguous chunks, one per pool slot. Falls back to a
// serial loop inside worker threads (no nesting).
void parallel_chunks(int n, const std::function<void(int, int)>& fn);

}  // namespace dtql
