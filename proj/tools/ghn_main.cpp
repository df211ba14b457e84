#include "cli.hpp"

int main(int argc, char** argv) { return ghn::cli::main_entry(argc, argv); }
