// In-memory channel standing in for the websocket in component tests.

import type { Channel } from '../src/wsClient.js'
import type { WireMessage } from '../src/types.js'

export class MockChannel implements Channel {
  outbound: WireMessage[] = []
  private messageHandler: ((text: string) => void) | null = null
  private openHandler: (() => void) | null = null
  private closeHandler: (() => void) | null = null
  closed = false

  send(text: string): void {
    this.outbound.push(JSON.parse(text) as WireMessage)
  }

  close(): void {
    this.closed = true
    this.closeHandler?.()
  }

  onMessage(handler: (text: string) => void): void {
    this.messageHandler = handler
  }

  onOpen(handler: () => void): void {
    this.openHandler = handler
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler
  }

  open(): void {
    this.openHandler?.()
  }

  /** Push a server frame into the client. */
  deliver(type: string, payload: Record<string, unknown>, t = 0, sessionId = 's'): void {
    this.messageHandler?.(JSON.stringify({ type, session_id: sessionId, t, payload }))
  }
}
