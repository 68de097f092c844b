use rugnn::eval::alloc::TrackingAllocator;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

fn main() {
    std::process::exit(rugnn::cli::main_entry());
}
