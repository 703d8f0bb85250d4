#include "hidegate/cli.hpp"

int main(int argc, char** argv) { return hidegate::cli::main(argc, argv); }
