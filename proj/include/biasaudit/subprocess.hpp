#pragma once

// Persistent child process speaking a line protocol over stdin/stdout (POSIX).

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "error.hpp"

namespace biasaudit {

/// Transport failure that carries the complete response lines read before it happened.
class PartialTransportError : public TransportError {
public:
    PartialTransportError(const std::string& what, std::vector<std::string> lines)
        : TransportError(what), lines_(std::move(lines)) {}
    const std::vector<std::string>& lines() const noexcept { return lines_; }

private:
    std::vector<std::string> lines_;
};

class LineProcess {
public:
    /// Starts `/bin/sh -c command` in its own process group; stderr is inherited.
    explicit LineProcess(const std::string& command) {
        std::signal(SIGPIPE, SIG_IGN);
        int in[2], out[2];
        if (pipe(in) != 0) throw TransportError("pipe: " + std::string(std::strerror(errno)));
        if (pipe(out) != 0) {
            close(in[0]);
            close(in[1]);
            throw TransportError("pipe: " + std::string(std::strerror(errno)));
        }
        pid_ = fork();
        if (pid_ < 0) throw TransportError("fork: " + std::string(std::strerror(errno)));
        if (pid_ == 0) {
            setpgid(0, 0);
            dup2(in[0], STDIN_FILENO);
            dup2(out[1], STDOUT_FILENO);
            close(in[0]);
            close(in[1]);
            close(out[0]);
            close(out[1]);
            execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        setpgid(pid_, pid_);
        close(in[0]);
        close(out[1]);
        to_child_ = in[1];
        from_child_ = out[0];
        fcntl(to_child_, F_SETFL, fcntl(to_child_, F_GETFL) | O_NONBLOCK);
        fcntl(from_child_, F_SETFL, fcntl(from_child_, F_GETFL) | O_NONBLOCK);
        fcntl(to_child_, F_SETFD, FD_CLOEXEC);
        fcntl(from_child_, F_SETFD, FD_CLOEXEC);
    }

    LineProcess(const LineProcess&) = delete;
    LineProcess& operator=(const LineProcess&) = delete;

    ~LineProcess() { terminate(); }

    bool running() const { return pid_ > 0 && !exited_; }

    /// Reads one line (handshake), waiting at most `timeout`.
    std::string read_line(std::chrono::milliseconds timeout) {
        auto lines = exchange({}, 1, timeout);
        return lines.front();
    }

    /// Writes `requests` (one per line) and collects `expected` response lines. On
    /// timeout or child exit the lines received so far are attached to the error.
    std::vector<std::string> exchange(const std::vector<std::string>& requests, std::size_t expected,
                                      std::chrono::milliseconds timeout) {
        if (!running()) throw TransportError("scorer process is not running");
        std::string pending;
        for (const auto& r : requests) pending += r + "\n";
        std::size_t written = 0;
        std::vector<std::string> lines;
        const auto deadline = std::chrono::steady_clock::now() + timeout;

        while (lines.size() < expected) {
            take_lines(lines, expected);
            if (lines.size() >= expected) break;
            const auto now = std::chrono::steady_clock::now();
            if (now >= deadline) {
                terminate(false);
                throw PartialTransportError("scorer timed out after " + std::to_string(timeout.count()) + " ms (" +
                                                std::to_string(lines.size()) + "/" + std::to_string(expected) +
                                                " responses received)",
                                            std::move(lines));
            }
            pollfd fds[2];
            nfds_t nf = 0;
            fds[nf++] = {from_child_, POLLIN, 0};
            const bool want_write = written < pending.size() && to_child_ >= 0;
            if (want_write) fds[nf++] = {to_child_, POLLOUT, 0};
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
            const int rc = poll(fds, nf, static_cast<int>(std::min<long long>(left, 1000)));
            if (rc < 0) {
                if (errno == EINTR) continue;
                throw TransportError("poll: " + std::string(std::strerror(errno)));
            }
            if (want_write && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
                const ssize_t k = write(to_child_, pending.data() + written, pending.size() - written);
                if (k > 0) written += static_cast<std::size_t>(k);
                else if (k < 0 && errno != EAGAIN && errno != EINTR) fail_exit(lines, expected);
            }
            if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
                char chunk[65536];
                const ssize_t k = read(from_child_, chunk, sizeof chunk);
                if (k > 0) buffer_.append(chunk, static_cast<std::size_t>(k));
                else if (k == 0) {
                    take_lines(lines, expected);
                    if (lines.size() >= expected) break;
                    fail_exit(lines, expected);
                } else if (errno != EAGAIN && errno != EINTR) {
                    fail_exit(lines, expected);
                }
            }
        }
        return lines;
    }

    /// Closes stdin and kills the child's process group, after a short grace period
    /// when `graceful`.
    void terminate(bool graceful = true) {
        if (to_child_ >= 0) {
            close(to_child_);
            to_child_ = -1;
        }
        if (pid_ > 0 && !exited_) {
            int status = 0;
            for (int i = 0; graceful && i < 50; ++i) {
                if (waitpid(pid_, &status, WNOHANG) == pid_) {
                    exited_ = true;
                    status_ = status;
                    break;
                }
                usleep(10000);
            }
            if (!exited_) {
                kill(-pid_, SIGKILL);
                waitpid(pid_, &status, 0);
                exited_ = true;
                status_ = status;
            }
        }
        if (from_child_ >= 0) {
            close(from_child_);
            from_child_ = -1;
        }
    }

private:
    void take_lines(std::vector<std::string>& lines, std::size_t expected) {
        std::size_t pos;
        while (lines.size() < expected && (pos = buffer_.find('\n')) != std::string::npos) {
            std::string line = buffer_.substr(0, pos);
            buffer_.erase(0, pos + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            lines.push_back(std::move(line));
        }
    }

    [[noreturn]] void fail_exit(std::vector<std::string>& lines, std::size_t expected) {
        terminate();
        std::string how = "scorer process exited";
        if (WIFEXITED(status_)) how += " with status " + std::to_string(WEXITSTATUS(status_));
        else if (WIFSIGNALED(status_)) how += " on signal " + std::to_string(WTERMSIG(status_));
        throw PartialTransportError(how + " (" + std::to_string(lines.size()) + "/" + std::to_string(expected) +
                                        " responses received)",
                                    std::move(lines));
    }

    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    bool exited_ = false;
    int status_ = 0;
    std::string buffer_;
};

/// Single-quotes `s` for /bin/sh.
inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

} // namespace biasaudit
