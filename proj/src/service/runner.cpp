#include <spdlog/spdlog.h>

#include "mvp/error.hpp"
#include "mvp/service/service.hpp"

namespace mvp::service {

JobRunner::JobRunner(render::JobStore& store, render::Clients clients, render::RunOptions options)
    : store_(store), clients_(clients), options_(std::move(options)) {
  options_.cancel = &cancel_;
}

JobRunner::~JobRunner() { stop(); }

void JobRunner::start(bool resume) {
  if (resume) {
    for (const auto& id : store_.list_ids()) {
      try {
        const auto job = store_.load(id);
        if (!render::is_terminal(job.status)) {
          spdlog::info("job={} event=resume status={}", id, render::to_string(job.status));
          queue_.push_back(id);
        }
      } catch (const std::exception& e) {
        spdlog::error("job={} event=load_failed reason=\"{}\"", id, e.what());
      }
    }
  }
  thread_ = std::thread([this] { loop(); });
}

void JobRunner::enqueue(const std::string& job_id) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(job_id);
  }
  cv_.notify_all();
}

void JobRunner::stop() {
  {
    std::lock_guard lock(mu_);
    if (stopping_ && !thread_.joinable()) return;
    stopping_ = true;
  }
  cancel_ = true;
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void JobRunner::wait_idle() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return (queue_.empty() && !busy_) || stopping_; });
}

void JobRunner::loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      busy_ = true;
    }
    const auto started = std::chrono::steady_clock::now();
    try {
      spdlog::info("job={} event=run_start", id);
      const auto manifest = render::run_job(store_, id, clients_, options_);
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - started)
                          .count();
      spdlog::info("job={} event=done frames={} elapsed_ms={}", id, manifest.frames.size(), ms);
    } catch (const Error& e) {
      if (cancel_) {
        spdlog::info("job={} event=interrupted reason=\"{}\"", id, e.what());
      } else {
        spdlog::error("job={} event=failed kind={} reason=\"{}\"", id, to_string(e.kind()), e.what());
      }
    } catch (const std::exception& e) {
      spdlog::error("job={} event=failed reason=\"{}\"", id, e.what());
    }
    {
      std::lock_guard lock(mu_);
      busy_ = false;
    }
    cv_.notify_all();
  }
}

}  // namespace mvp::service
