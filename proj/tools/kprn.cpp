#include "kprn/cli.hpp"

int main(int argc, char** argv) { return kprn::cli::run(argc, argv); }
