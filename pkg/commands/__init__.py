# Commands: game harness and verification suites
