#include "cacophony/cli.hpp"

int main(int argc, char** argv) { return cacophony::cli_run(argc, argv); }
