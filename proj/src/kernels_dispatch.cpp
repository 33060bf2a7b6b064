#include <cstdlib>
#include <cstring>
#include <string>

#include "dtql/errors.hpp"
#include "dtql/kernels.hpp"
#include "dtql/parallel.hpp"

namespace dtql::kernels {

const Backend* avx2_backend_impl();  // defined in kernels_avx2.cpp (may be null)

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
    return avx2_backend_impl() != nullptr && __builtin_cpu_supports("avx2") &&
           __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Backend* backend_by_name(const char* name) {
    if (std::strcmp(name, "scalar") == 0) return &scalar_backend();
    if (std::strcmp(name, "avx2") == 0 && avx2_supported()) return avx2_backend_impl();
    return nullptr;
}

namespace {
const Backend* select_initial() {
    if (const char* env = std::getenv("DTQL_KERNELS")) {
        if (const Backend* b = backend_by_name(env)) return b;
        throw config_error(std::string("DTQL_KERNELS: unknown or unsupported backend '") +
                           env + "'");
    }
    return avx2_supported() ? avx2_backend_impl() : &scalar_backend();
}

const Backend*& active_slot() {
    static const Backend* b = select_initial();
    return b;
}
}  // namespace

const Backend& active() { return *active_slot(); }

void set_backend(const char* name) {
    const Backend* b = backend_by_name(name);
    if (!b) throw config_error(std::string("set_backend: unknown or unsupported '") + name + "'");
    active_slot() = b;
}

namespace {
// Below this many multiply-adds the pool dispatch overhead dominates.
constexpr double kParallelFlops = 4.0e5;

template <typename F>
void run_gemm(int M, double work, F&& call) {
    ThreadPool& pool = ThreadPool::instance();
    if (work < kParallelFlops || pool.size() <= 1 || ThreadPool::in_worker() || M < 2) {
        call(0, M);
        return;
    }
    parallel_chunks(M, call);
}
}  // namespace

void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    const Backend& b = active();
    run_gemm(M, double(M) * K * N,
             [&](int m0, int m1) { b.gemm_nn(A, B, C, M, K, N, acc, m0, m1); });
}

void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    const Backend& b = active();
    run_gemm(M, double(M) * K * N,
             [&](int m0, int m1) { b.gemm_nt(A, B, C, M, K, N, acc, m0, m1); });
}

void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N, bool acc) {
    const Backend& b = active();
    run_gemm(M, double(M) * K * N,
             [&](int m0, int m1) { b.gemm_tn(A, B, C, M, K, N, acc, m0, m1); });
}

}  // namespace dtql::kernels

// ----------------------------------------------------------- thread pool ---

namespace dtql {
namespace {
thread_local bool t_in_worker = false;

int pool_threads_from_env() {
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* env = std::getenv("DTQL_THREADS")) {
        int want = std::atoi(env);
        if (want >= 1) n = want;
    }
    if (n > 16) n = 16;
    return n - 1;  // the caller participates
}
}  // namespace

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool;
    return pool;
}

bool ThreadPool::in_worker() { return t_in_worker; }

ThreadPool::ThreadPool() : threads_(pool_threads_from_env()) {
    pool_.reserve(threads_);
    for (int i = 0; i < threads_; ++i) pool_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
    {
        std::lock_guard<std::mutex> lk(mu_);
        stop_ = true;
    }
    cv_start_.notify_all();
    for (auto& t : pool_) t.join();
}

void ThreadPool::worker_loop() {
    t_in_worker = true;
    uint64_t seen = 0;
    for (;;) {
        const std::function<void(int)>* job = nullptr;
        {
            std::unique_lock<std::mutex> lk(mu_);
            cv_start_.wait(lk, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            job = job_;
        }
        for (;;) {
            int blk = next_block_.fetch_add(1);
            if (blk >= job_blocks_) break;
            (*job)(blk);
            remaining_.fetch_sub(1);
        }
        cv_done_.notify_one();
    }
}

void ThreadPool::run(int nblocks, const std::function<void(int)>& fn) {
    if (nblocks <= 0) return;
    if (threads_ == 0 || t_in_worker) {
        for (int i = 0; i < nblocks; ++i) fn(i);
        return;
    }
    {
        std::lock_guard<std::mutex> lk(mu_);
        job_ = &fn;
        job_blocks_ = nblocks;
        next_block_.store(0);
        remaining_.store(nblocks);
        ++generation_;
    }
    cv_start_.notify_all();
    for (;;) {
        int blk = next_block_.fetch_add(1);
        if (blk >= nblocks) break;
        fn(blk);
        remaining_.fetch_sub(1);
    }
    std::unique_lock<std::mutex> lk(mu_);
    cv_done_.wait(lk, [&] { return remaining_.load() == 0; });
}

void parallel_chunks(int n, const std::function<void(int, int)>& fn) {
    ThreadPool& pool = ThreadPool::instance();
    int slots = pool.size();
    if (slots <= 1 || ThreadPool::in_worker() || n < 2) {
        fn(0, n);
        return;
    }
    int nblocks = std::min(slots, n);
    int base = n / nblocks, rem = n % nblocks;
    pool.run(nblocks, [&](int b) {
        int lo = b * base + std::min(b, rem);
        int hi = lo + base + (b < rem ? 1 : 0);
        fn(lo, hi);
    });
}

}  // namespace dtql
