#pragma once

// Minimal bidirectional subprocess helper for external cost providers: feed a
// line to the child's stdin, collect all of its stdout, reap the exit status.

#include <cerrno>
#include <cstring>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "donna/common.hpp"

namespace donna {

struct SubprocessResult {
  int exit_code = -1;
  std::string output;
};

// Runs `command` through /bin/sh -c, writes `input` to its stdin, and returns
// its stdout plus exit code. The input is written before any read, so callers
// must keep inputs below the pipe buffer (our protocol sends a single short
// line).
inline SubprocessResult run_command(const std::string& command, const std::string& input) {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
    fail("subprocess: pipe() failed: " + std::string(std::strerror(errno)));
  }

  pid_t pid = fork();
  if (pid < 0) {
    fail("subprocess: fork() failed: " + std::string(std::strerror(errno)));
  }

  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }

  close(in_pipe[0]);
  close(out_pipe[1]);

  size_t written = 0;
  while (written < input.size()) {
    ssize_t n = write(in_pipe[1], input.data() + written, input.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;  // child may have exited without reading; the exit code will tell
    }
    written += static_cast<size_t>(n);
  }
  close(in_pipe[1]);

  SubprocessResult result;
  char buf[4096];
  for (;;) {
    ssize_t n = read(out_pipe[0], buf, sizeof(buf));
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (n == 0) break;
    result.output.append(buf, static_cast<size_t>(n));
  }
  close(out_pipe[0]);

  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) {
      fail("subprocess: waitpid() failed: " + std::string(std::strerror(errno)));
    }
  }
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  return result;
}

}  // namespace donna
