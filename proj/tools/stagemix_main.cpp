#include "stagemix/cli.hpp"

int main(int argc, char** argv) { return stagemix::cli::run(argc, argv); }
